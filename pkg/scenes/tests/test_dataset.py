import json
import tempfile
from io import StringIO
from pathlib import Path

import numpy as np
from django.core.management import call_command
from django.core.management.base import CommandError
from django.test import SimpleTestCase

from engine.exceptions import ConfigError, DataError, FormatError, IoError
from scenes.dataset import MANIFEST_NAME, Split, load_arrays, load_split, make_dataset, verify_checksums
from scenes.imageio import load_mask
from scenes.synthetic import SyntheticSceneParams

TINY = SyntheticSceneParams(height=16, width=16)


class DatasetTests(SimpleTestCase):
    def setUp(self):
        self._tmp = tempfile.TemporaryDirectory()
        self.tmp = Path(self._tmp.name)

    def tearDown(self):
        self._tmp.cleanup()

    def test_split_counts_and_layout(self):
        dataset = make_dataset(self.tmp / 'data', 4, 2, 3, TINY, seed=1)
        self.assertEqual(dataset.counts(), {'train': 4, 'val': 2, 'test': 3})
        self.assertTrue((self.tmp / 'data' / 'train' / 'images' / '0003.pgm').exists())
        self.assertTrue((self.tmp / 'data' / 'test' / 'masks' / '0002.pgm').exists())
        self.assertTrue((self.tmp / 'data' / MANIFEST_NAME).exists())

    def test_splits_are_disjoint(self):
        dataset = make_dataset(self.tmp / 'data', 3, 3, 3, TINY, seed=1)
        images = [dataset.image_path(pair).read_bytes() for name in Split.values for pair in dataset.split(name)]
        self.assertEqual(len(set(images)), 9)
        paths = list(dataset.paths())
        self.assertEqual(len(paths), len(set(paths)))

    def test_same_seed_gives_identical_files(self):
        make_dataset(self.tmp / 'a', 2, 1, 1, TINY, seed=5)
        make_dataset(self.tmp / 'b', 2, 1, 1, TINY, seed=5)
        self.assertEqual((self.tmp / 'a' / MANIFEST_NAME).read_bytes(), (self.tmp / 'b' / MANIFEST_NAME).read_bytes())
        for rel in ('train/images/0001.pgm', 'val/masks/0000.pgm', 'test/images/0000.pgm'):
            self.assertEqual((self.tmp / 'a' / rel).read_bytes(), (self.tmp / 'b' / rel).read_bytes())

    def test_different_seed_differs(self):
        first = make_dataset(self.tmp / 'a', 1, 1, 1, TINY, seed=1)
        second = make_dataset(self.tmp / 'b', 1, 1, 1, TINY, seed=2)
        self.assertNotEqual(first.split('train')[0].image_sha256, second.split('train')[0].image_sha256)

    def test_masks_are_binary(self):
        dataset = make_dataset(self.tmp / 'data', 2, 1, 1, TINY, seed=1)
        for pair in dataset.split('train'):
            self.assertEqual(set(np.unique(load_mask(dataset.mask_path(pair)))) - {0, 1}, set())

    def test_empty_split_is_rejected(self):
        with self.assertRaises(ConfigError):
            make_dataset(self.tmp / 'data', 2, 0, 1, TINY)

    def test_load_split_reads_manifest(self):
        made = make_dataset(self.tmp / 'data', 2, 1, 1, TINY, seed=3)
        loaded = load_split(self.tmp / 'data')
        self.assertEqual(loaded.pairs, made.pairs)
        self.assertEqual(loaded.seed, 3)
        verify_checksums(loaded)

    def test_load_arrays(self):
        dataset = make_dataset(self.tmp / 'data', 3, 1, 1, TINY, seed=3)
        arrays = load_arrays(dataset, 'train')
        self.assertEqual(arrays.images.shape, (3, 1, 16, 16))
        self.assertEqual(arrays.masks.shape, (3, 1, 16, 16))
        self.assertEqual(arrays.ids, ['0000', '0001', '0002'])

    def test_tampered_file_fails_checksum(self):
        dataset = make_dataset(self.tmp / 'data', 1, 1, 1, TINY, seed=3)
        dataset.mask_path(dataset.split('val')[0]).write_bytes(b'P5\n1 1\n255\n\x00')
        with self.assertRaises(DataError):
            verify_checksums(dataset)

    def test_missing_and_corrupt_manifest(self):
        with self.assertRaises(IoError):
            load_split(self.tmp / 'nowhere')
        (self.tmp / MANIFEST_NAME).write_text('{not json')
        with self.assertRaises(FormatError):
            load_split(self.tmp)
        (self.tmp / MANIFEST_NAME).write_text(json.dumps({'seed': 0}))
        with self.assertRaises(FormatError):
            load_split(self.tmp)

    def test_unknown_split(self):
        dataset = make_dataset(self.tmp / 'data', 1, 1, 1, TINY)
        with self.assertRaises(DataError):
            dataset.split('holdout')


class GenerateCommandTests(SimpleTestCase):
    def setUp(self):
        self._tmp = tempfile.TemporaryDirectory()
        self.out = Path(self._tmp.name) / 'data'

    def tearDown(self):
        self._tmp.cleanup()

    def generate(self, *extra):
        stdout = StringIO()
        call_command('generate', '--out', str(self.out), '--train', '2', '--val', '1', '--test', '1',
                     '--size', '16', '--seed', '7', *extra, stdout=stdout)
        return stdout.getvalue()

    def test_writes_dataset(self):
        output = self.generate()
        self.assertIn('Generated 4 scenes', output)
        self.assertEqual(load_split(self.out).counts(), {'train': 2, 'val': 1, 'test': 1})

    def test_refuses_to_overwrite_without_force(self):
        self.generate()
        with self.assertRaises(CommandError) as caught:
            self.generate()
        self.assertEqual(caught.exception.returncode, 1)
        self.generate('--force')

    def test_bad_argument_is_a_usage_error(self):
        with self.assertRaises(CommandError) as caught:
            self.generate('--looks', 'many')
        self.assertEqual(caught.exception.returncode, 1)

    def test_zero_count_is_a_usage_error(self):
        with self.assertRaises(CommandError):
            call_command('generate', '--out', str(self.out), '--val', '0', stdout=StringIO())
