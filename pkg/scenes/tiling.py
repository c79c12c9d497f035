"""Overlapping patch tiling of large scenes and averaging stitch."""
from typing import List, Sequence, Tuple

import numpy as np

from engine.exceptions import ConfigError, ShapeError

Position = Tuple[int, int]


def tile_starts(length: int, patch: int, stride: int) -> List[int]:
    """Start offsets along one axis; the last tile is clamped to the border."""
    if stride < 1:
        raise ConfigError(f'stride must be positive, got {stride}')
    if patch > length:
        raise ShapeError(f'patch size {patch} exceeds image extent {length}')
    starts = list(range(0, length - patch + 1, stride))
    if starts[-1] + patch < length:
        starts.append(length - patch)
    return starts


def tile(image: np.ndarray, patch: int = 256, stride: int = 128) -> Tuple[List[np.ndarray], List[Position]]:
    """Cut ``image`` into overlapping patches; an axis shorter than ``patch`` is taken whole."""
    image = np.asarray(image)
    if image.ndim != 3:
        raise ShapeError(f'expected a c×H×W image, got shape {image.shape}')
    height, width = image.shape[1:]
    patch_y, patch_x = min(patch, height), min(patch, width)
    patches, positions = [], []
    for top in tile_starts(height, patch_y, stride):
        for left in tile_starts(width, patch_x, stride):
            patches.append(image[:, top:top + patch_y, left:left + patch_x])
            positions.append((top, left))
    return patches, positions


def stitch(patches: Sequence[np.ndarray], positions: Sequence[Position], height: int, width: int) -> np.ndarray:
    """Average overlapping patches back into a c×H×W array."""
    if not patches or len(patches) != len(positions):
        raise ShapeError('stitch needs one position per patch and at least one patch')
    channels = np.asarray(patches[0]).shape[0]
    total = np.zeros((channels, height, width), dtype=np.float64)
    count = np.zeros((height, width), dtype=np.int64)
    for patch, (top, left) in zip(patches, positions):
        patch = np.asarray(patch)
        size_y, size_x = patch.shape[1:]
        if top + size_y > height or left + size_x > width or patch.shape[0] != channels:
            raise ShapeError(f'patch of shape {patch.shape} at {(top, left)} does not fit {height}×{width}')
        total[:, top:top + size_y, left:left + size_x] += patch
        count[top:top + size_y, left:left + size_x] += 1
    if not count.all():
        raise ShapeError('patches do not cover the whole image')
    return (total / count).astype(np.float32)
