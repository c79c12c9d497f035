"""8-bit grayscale image I/O (binary PGM, optionally PNG) and intensity normalization."""
from pathlib import Path
from typing import Union

import numpy as np
from PIL import Image, UnidentifiedImageError

from engine.exceptions import FormatError, IoError

SUPPORTED_SUFFIXES = ('.pgm', '.png')
MASK_LEVEL = 128


def normalize(image: np.ndarray) -> np.ndarray:
    """Map 8-bit values [0, 255] to float32 [0, 1]."""
    return np.asarray(image, dtype=np.float32) / np.float32(255.0)


def to_uint8(image: np.ndarray) -> np.ndarray:
    """Inverse of :func:`normalize`; exact for values on the 1/255 grid."""
    return np.rint(np.clip(np.asarray(image, dtype=np.float64), 0.0, 1.0) * 255.0).astype(np.uint8)


def _check_suffix(path: Path) -> None:
    if path.suffix.lower() not in SUPPORTED_SUFFIXES:
        raise FormatError(f'unsupported image format {path.suffix!r}; use one of {SUPPORTED_SUFFIXES}')


def read_gray(path: Union[str, Path]) -> np.ndarray:
    """Raw 8-bit pixel array of a grayscale image."""
    path = Path(path)
    _check_suffix(path)
    try:
        with Image.open(path) as image:
            if image.mode != 'L':
                raise FormatError(f'{path} is {image.mode!r}, expected 8-bit grayscale')
            return np.array(image, dtype=np.uint8)
    except UnidentifiedImageError as exc:
        raise FormatError(f'{path} is not a readable image') from exc
    except OSError as exc:
        raise IoError(f'cannot read {path}: {exc}') from exc


def write_gray(pixels: np.ndarray, path: Union[str, Path]) -> Path:
    path = Path(path)
    _check_suffix(path)
    pixels = np.asarray(pixels)
    if pixels.ndim != 2 or pixels.dtype != np.uint8:
        raise FormatError(f'expected a 2-d uint8 array, got {pixels.dtype} with shape {pixels.shape}')
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        Image.fromarray(pixels).save(path)
    except OSError as exc:
        raise IoError(f'cannot write {path}: {exc}') from exc
    return path


def load_image(path: Union[str, Path]) -> np.ndarray:
    """Image as a float32 1×h×w array in [0, 1]."""
    return normalize(read_gray(path))[None]


def save_image(image: np.ndarray, path: Union[str, Path]) -> Path:
    image = np.asarray(image)
    if image.ndim == 3:
        image = image[0]
    return write_gray(to_uint8(image), path)


def load_mask(path: Union[str, Path]) -> np.ndarray:
    """Binary uint8 mask: pixels at or above 128 become 1."""
    return (read_gray(path) >= MASK_LEVEL).astype(np.uint8)


def save_mask(mask: np.ndarray, path: Union[str, Path]) -> Path:
    mask = np.asarray(mask)
    if mask.ndim == 3:
        mask = mask[0]
    return write_gray(np.where(mask > 0, 255, 0).astype(np.uint8), path)
