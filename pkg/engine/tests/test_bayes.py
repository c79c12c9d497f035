import json
import tempfile
from pathlib import Path

import numpy as np
from django.test import SimpleTestCase
from hypothesis import given, settings, strategies as st
from PIL import Image

from engine.bayes import (
    McSampleSet, binarize, load_raw_variance, mc_sample, posterior_mean, posterior_variance, save_heatmap,
    save_raw_variance, select_threshold, uncertainty_map, variance_to_uint8,
)
from engine.exceptions import ConfigError, DataError, FormatError
from engine.layers import Dropout
from engine.tensor import Tensor
from engine.unet import UNetSpec, build


class LinearDropoutNet:
    """p = Σ dropout(w·x) over a single row of contributions."""

    def __init__(self, contributions, rate):
        self.contributions = np.asarray(contributions, dtype=np.float32).reshape(1, 1, 1, -1)
        self.dropout = Dropout(rate)

    def forward(self, x, dropout_mode, bn_mode, rng=None):
        kept = self.dropout.forward(Tensor(self.contributions), dropout_mode, rng)
        return kept.sum(axes=3, keepdims=True)


def sample_set(values):
    return McSampleSet(np.asarray(values, dtype=np.float32).reshape(len(values), 1, 1, -1), seed_base=0)


class McSampleTests(SimpleTestCase):
    spec = UNetSpec(base_filters=2, levels=2, kernel=3, dropout_rate=0.5)

    def image(self):
        return np.random.default_rng(0).random((1, 8, 8)).astype(np.float32)

    def test_needs_at_least_one_pass(self):
        with self.assertRaises(ConfigError):
            mc_sample(build(self.spec), self.image(), T=0, seed_base=0)

    def test_same_seed_same_samples(self):
        net = build(self.spec, seed=1)
        first = mc_sample(net, self.image(), T=4, seed_base=10)
        second = mc_sample(net, self.image(), T=4, seed_base=10)
        self.assertEqual(first.samples.shape, (4, 1, 8, 8))
        self.assertEqual(first.samples.tobytes(), second.samples.tobytes())

    def test_thread_pool_keeps_pass_order(self):
        net = build(self.spec, seed=1)
        serial = mc_sample(net, self.image(), T=5, seed_base=3)
        pooled = mc_sample(net, self.image(), T=5, seed_base=3, workers=3)
        self.assertEqual(serial.samples.tobytes(), pooled.samples.tobytes())

    def test_zero_rate_gives_identical_samples(self):
        net = build(UNetSpec(base_filters=2, levels=2, kernel=3, dropout_rate=0.0), seed=1)
        samples = mc_sample(net, self.image(), T=3, seed_base=0).samples
        self.assertEqual(samples[0].tobytes(), samples[1].tobytes())
        np.testing.assert_array_equal(posterior_variance(McSampleSet(samples, 0)), np.zeros((1, 8, 8)))

    def test_passes_differ_with_dropout(self):
        samples = mc_sample(build(self.spec, seed=1), self.image(), T=2, seed_base=0).samples
        self.assertFalse(np.array_equal(samples[0], samples[1]))

    def test_moments_match_linear_dropout_model(self):
        # four contributions of 0.075 with keep probability 0.5: mean 0.3, variance 4 · 0.075²
        net = LinearDropoutNet([0.075] * 4, rate=0.5)
        samples = mc_sample(net, np.zeros((1, 1, 4), dtype=np.float32), T=100_000, seed_base=0)
        mean = float(posterior_mean(samples).ravel()[0])
        variance = float(posterior_variance(samples).ravel()[0])
        self.assertLess(abs(mean - 0.3) / 0.3, 0.01)
        self.assertLess(abs(variance - 4 * 0.075 ** 2) / (4 * 0.075 ** 2), 0.03)


class MomentTests(SimpleTestCase):
    def test_hand_cases(self):
        samples = sample_set([[0.0], [1.0]])
        self.assertEqual(posterior_mean(samples).item(), 0.5)
        self.assertEqual(posterior_variance(samples).item(), 0.25)

    def test_constant_samples_have_zero_variance(self):
        samples = sample_set([[0.3, 0.7]] * 5)
        np.testing.assert_allclose(posterior_mean(samples).ravel(), [0.3, 0.7], rtol=1e-6)
        np.testing.assert_allclose(posterior_variance(samples), np.zeros((1, 1, 2)), atol=1e-12)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(1, 12), st.integers(0, 2 ** 16))
    def test_matches_two_pass_formulas(self, T, seed):
        values = np.random.default_rng(seed).random((T, 6))
        samples = sample_set(values)
        stored = samples.samples.astype(np.float64).reshape(T, 6)
        mean = stored.sum(axis=0) / T
        variance = ((stored - mean) ** 2).sum(axis=0) / T
        np.testing.assert_allclose(posterior_mean(samples).ravel(), mean, atol=1e-6)
        np.testing.assert_allclose(posterior_variance(samples).ravel(), variance, atol=1e-6)
        self.assertTrue(np.all(posterior_variance(samples) >= 0))
        self.assertTrue(np.all(posterior_variance(samples) <= 0.25 + 1e-6))


class ThresholdTests(SimpleTestCase):
    def test_unit_range(self):
        self.assertAlmostEqual(select_threshold([np.array([0.0, 1.0])]), 0.9)

    def test_constant_values(self):
        self.assertEqual(select_threshold([np.full(10, 0.02)]), 0.02)

    def test_pooled_maps_match_histogram_edge(self):
        maps = [np.array([0.0, 0.01, 0.05]), np.array([[0.1389, 0.002]])]
        expected = np.histogram(np.concatenate([m.ravel() for m in maps]), bins=10)[1][-2]
        self.assertAlmostEqual(select_threshold(maps), expected)
        self.assertAlmostEqual(select_threshold(maps), 0.9 * 0.1389, places=9)

    def test_no_values(self):
        with self.assertRaises(DataError):
            select_threshold([])
        with self.assertRaises(DataError):
            select_threshold([np.array([])])

    def test_binarize_is_inclusive(self):
        np.testing.assert_array_equal(binarize(np.array([0.1, 0.2, 0.3]), 0.2), [0, 1, 1])
        self.assertEqual(binarize(np.zeros(3), 0.2).dtype, np.uint8)

    def test_uncertainty_map(self):
        result = uncertainty_map(sample_set([[0.0, 0.5], [1.0, 0.5]]), threshold=0.1)
        np.testing.assert_allclose(result.variance.ravel(), [0.25, 0.0])
        np.testing.assert_array_equal(result.binarized.ravel(), [1, 0])


class ExportTests(SimpleTestCase):
    def test_heatmap_scaling(self):
        np.testing.assert_array_equal(variance_to_uint8(np.array([0.0, 0.125, 0.25, 0.4])), [0, 128, 255, 255])

    def test_heatmap_file(self):
        variance = np.linspace(0, 0.25, 16, dtype=np.float32).reshape(4, 4)
        with tempfile.TemporaryDirectory() as tmp:
            path = save_heatmap(variance, Path(tmp) / 'heat.pgm')
            with Image.open(path) as image:
                self.assertEqual(image.mode, 'L')
                pixels = np.asarray(image)
        self.assertEqual(pixels[0, 0], 0)
        self.assertEqual(pixels[-1, -1], 255)

    def test_raw_variance_is_exact(self):
        variance = np.random.default_rng(0).random((5, 7)).astype(np.float32) / 4
        with tempfile.TemporaryDirectory() as tmp:
            path, sidecar = save_raw_variance(variance, Path(tmp) / '0001', threshold=0.125)
            self.assertEqual(path.suffix, '.f32')
            self.assertEqual(json.loads(sidecar.read_text())['shape'], [5, 7])
            restored, threshold = load_raw_variance(path)
        self.assertEqual(restored.tobytes(), variance.tobytes())
        self.assertEqual(threshold, 0.125)

    def test_raw_variance_size_mismatch(self):
        with tempfile.TemporaryDirectory() as tmp:
            path, _ = save_raw_variance(np.zeros((2, 2)), Path(tmp) / 'v', threshold=None)
            path.write_bytes(b'\x00' * 12)
            with self.assertRaises(FormatError):
                load_raw_variance(path)
