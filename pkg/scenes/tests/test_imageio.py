import tempfile
from pathlib import Path

import numpy as np
from django.test import SimpleTestCase
from PIL import Image

from engine.exceptions import FormatError, IoError
from scenes.imageio import load_image, load_mask, normalize, read_gray, save_image, save_mask, to_uint8


class ImageIoTests(SimpleTestCase):
    def setUp(self):
        self._tmp = tempfile.TemporaryDirectory()
        self.tmp = Path(self._tmp.name)

    def tearDown(self):
        self._tmp.cleanup()

    def test_normalize_endpoints(self):
        np.testing.assert_array_equal(normalize(np.array([0, 255], dtype=np.uint8)), [0.0, 1.0])
        self.assertEqual(normalize(np.zeros(2, dtype=np.uint8)).dtype, np.float32)

    def test_uint8_grid_is_exact(self):
        pixels = np.arange(256, dtype=np.uint8)
        np.testing.assert_array_equal(to_uint8(normalize(pixels)), pixels)

    def test_image_round_trip(self):
        pixels = np.random.default_rng(0).integers(0, 256, (12, 20), dtype=np.uint8)
        for suffix in ('.pgm', '.png'):
            with self.subTest(suffix=suffix):
                path = save_image(normalize(pixels)[None], self.tmp / f'scene{suffix}')
                image = load_image(path)
                self.assertEqual(image.shape, (1, 12, 20))
                np.testing.assert_array_equal(to_uint8(image[0]), pixels)

    def test_mask_threshold(self):
        Image.fromarray(np.array([[0, 127, 128, 200, 255]], dtype=np.uint8)).save(self.tmp / 'mask.pgm')
        mask = load_mask(self.tmp / 'mask.pgm')
        np.testing.assert_array_equal(mask, [[0, 0, 1, 1, 1]])
        self.assertEqual(mask.dtype, np.uint8)

    def test_mask_is_written_as_0_and_255(self):
        save_mask(np.array([[0, 1], [1, 0]]), self.tmp / 'mask.pgm')
        np.testing.assert_array_equal(read_gray(self.tmp / 'mask.pgm'), [[0, 255], [255, 0]])

    def test_unsupported_suffix(self):
        with self.assertRaises(FormatError):
            save_image(np.zeros((1, 4, 4)), self.tmp / 'scene.tif')
        with self.assertRaises(FormatError):
            load_image(self.tmp / 'scene.jpg')

    def test_colour_image_is_rejected(self):
        Image.new('RGB', (4, 4)).save(self.tmp / 'colour.png')
        with self.assertRaises(FormatError):
            load_image(self.tmp / 'colour.png')

    def test_not_an_image(self):
        (self.tmp / 'broken.pgm').write_bytes(b'not an image')
        with self.assertRaises(FormatError):
            load_image(self.tmp / 'broken.pgm')

    def test_missing_file(self):
        with self.assertRaises(IoError):
            load_image(self.tmp / 'absent.pgm')
