from dataclasses import replace

import numpy as np
from django.test import SimpleTestCase
from hypothesis import given, settings, strategies as st

from engine.exceptions import ConfigError, DataError
from scenes.synthetic import SyntheticSceneParams, generate_scene, generate_scenes, scene_seeds, speckle

SMALL = SyntheticSceneParams(height=64, width=64)


class SpeckleTests(SimpleTestCase):
    def test_unit_mean_and_inverse_looks_variance(self):
        values = speckle((200, 200), looks=4.0, rng=np.random.default_rng(0))
        self.assertAlmostEqual(values.mean(), 1.0, delta=0.02)
        self.assertAlmostEqual(values.var() * 4.0, 1.0, delta=0.05)


class SceneTests(SimpleTestCase):
    def test_image_and_mask_formats(self):
        scene = generate_scene(SMALL)
        self.assertEqual(scene.image.shape, (1, 64, 64))
        self.assertEqual(scene.image.dtype, np.float32)
        self.assertEqual(scene.mask.shape, (64, 64))
        self.assertEqual(set(np.unique(scene.mask)) - {0, 1}, set())
        self.assertTrue(np.all((scene.image >= 0) & (scene.image <= 1)))

    def test_high_looks_is_piecewise_constant(self):
        params = replace(SMALL, looks=1e6, blob_density=0.0, seed=4)
        scene = generate_scene(params)
        glacier, melange = scene.image[0][scene.mask == 1], scene.image[0][scene.mask == 0]
        np.testing.assert_allclose(glacier, params.glacier_mean, rtol=0.01)
        np.testing.assert_allclose(melange, params.melange_mean, rtol=0.01)

    def test_speckle_statistics_per_region(self):
        # low region means keep the clip at 1 out of reach
        params = SyntheticSceneParams(height=256, width=256, glacier_mean=0.2, contrast=0.1,
                                      blob_density=0.0, looks=4.0, seed=2)
        scene = generate_scene(params)
        for label in (0, 1):
            region = scene.image[0][scene.mask == label].astype(np.float64)
            with self.subTest(label=label):
                self.assertAlmostEqual(region.var() / region.mean() ** 2 * params.looks, 1.0, delta=0.1)

    def test_mask_is_left_or_right_of_one_front(self):
        scene = generate_scene(replace(SMALL, seed=9))
        for row in scene.mask:
            changes = np.count_nonzero(np.diff(row.astype(np.int8)))
            self.assertLessEqual(changes, 1)

    @settings(max_examples=15, deadline=None)
    @given(st.integers(0, 2 ** 31 - 1))
    def test_foreground_fraction_within_band(self, seed):
        scene = generate_scene(replace(SMALL, seed=seed))
        self.assertGreaterEqual(scene.mask.mean(), 0.2)
        self.assertLessEqual(scene.mask.mean(), 0.8)

    def test_same_seed_same_scene(self):
        first, second = generate_scene(replace(SMALL, seed=11)), generate_scene(replace(SMALL, seed=11))
        self.assertEqual(first.image.tobytes(), second.image.tobytes())
        self.assertEqual(first.mask.tobytes(), second.mask.tobytes())

    def test_impossible_band_raises(self):
        with self.assertRaises(DataError):
            generate_scene(replace(SMALL, foreground_band=(0.99, 1.0)))

    def test_invalid_params(self):
        for overrides in ({'looks': 0.0}, {'contrast': 0.9}, {'foreground_band': (0.8, 0.2)}, {'height': 4}):
            with self.subTest(**overrides), self.assertRaises(ConfigError):
                generate_scene(replace(SMALL, **overrides))


class SceneSeedTests(SimpleTestCase):
    def test_seeds_are_distinct_and_stable(self):
        seeds = scene_seeds(0, 50)
        self.assertEqual(len(set(seeds.tolist())), 50)
        np.testing.assert_array_equal(seeds, scene_seeds(0, 50))

    def test_generator_yields_count_scenes(self):
        scenes = list(generate_scenes(replace(SMALL, height=16, width=16), seed=1, count=3))
        self.assertEqual(len(scenes), 3)
        self.assertFalse(np.array_equal(scenes[0].image, scenes[1].image))
