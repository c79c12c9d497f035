"""Synthetic SAR-like calving-front scenes.

A smooth front curve crosses the image from top to bottom and splits it into a
glacier region (mask 1) and an ice-melange/water region (mask 0). Both regions
get a constant mean intensity, the melange side gets bright smoothed blobs
close to the front, and the whole scene is multiplied by Gamma(L, 1/L)
speckle, the multi-look intensity model of SAR.
"""
import logging
from dataclasses import dataclass, replace
from typing import Tuple

import numpy as np
from scipy.interpolate import CubicSpline
from scipy.ndimage import gaussian_filter

from engine.exceptions import ConfigError, DataError

logger = logging.getLogger(__name__)

MAX_RETRIES = 10


@dataclass(frozen=True)
class SyntheticSceneParams:
    height: int = 256
    width: int = 256
    min_control_points: int = 4
    max_control_points: int = 8
    # horizontal wander of the control points, as a fraction of the width
    amplitude: float = 0.15
    glacier_mean: float = 0.6
    contrast: float = 0.35
    looks: float = 4.0
    blob_density: float = 0.002
    blob_sigma: float = 2.5
    # melange blobs fade out with the distance from the front, in pixels
    blob_reach: float = 24.0
    foreground_band: Tuple[float, float] = (0.2, 0.8)
    seed: int = 0

    @property
    def melange_mean(self) -> float:
        return self.glacier_mean - self.contrast

    def validate(self) -> None:
        if self.height < 8 or self.width < 8:
            raise ConfigError(f'scene size must be at least 8×8, got {self.height}×{self.width}')
        if not 2 <= self.min_control_points <= self.max_control_points:
            raise ConfigError('control-point range must satisfy 2 ≤ min ≤ max')
        if not (0.0 <= self.melange_mean and self.glacier_mean <= 1.0):
            raise ConfigError('glacier_mean and contrast must keep both region means in [0, 1]')
        if self.looks <= 0:
            raise ConfigError(f'number of looks must be positive, got {self.looks}')
        if not 0.0 <= self.blob_density <= 1.0:
            raise ConfigError(f'blob_density must lie in [0, 1], got {self.blob_density}')
        low, high = self.foreground_band
        if not 0.0 <= low < high <= 1.0:
            raise ConfigError(f'invalid foreground band {self.foreground_band}')


@dataclass
class SyntheticScene:
    image: np.ndarray  # float32, 1×h×w, values in [0, 1]
    mask: np.ndarray   # uint8, h×w, values in {0, 1}
    attempts: int


def front_curve(params: SyntheticSceneParams, rng: np.random.Generator) -> np.ndarray:
    """Column position of the front for every row."""
    count = int(rng.integers(params.min_control_points, params.max_control_points + 1))
    rows = np.linspace(0.0, params.height - 1, count)
    centre = rng.uniform(0.35, 0.65) * params.width
    columns = centre + rng.uniform(-params.amplitude, params.amplitude, count) * params.width
    return CubicSpline(rows, columns)(np.arange(params.height))


def speckle(shape, looks: float, rng: np.random.Generator) -> np.ndarray:
    """Multiplicative speckle with mean 1 and variance 1/looks."""
    return rng.gamma(shape=looks, scale=1.0 / looks, size=shape)


def melange_blobs(params: SyntheticSceneParams, front: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Blob field in [0, 1], strongest next to the front."""
    seeds = (rng.random((params.height, params.width)) < params.blob_density).astype(np.float64)
    if not seeds.any():
        return seeds
    blobs = gaussian_filter(seeds, sigma=params.blob_sigma)
    blobs /= blobs.max()
    distance = np.abs(np.arange(params.width)[None, :] - front[:, None])
    return blobs * np.exp(-distance / params.blob_reach)


def _draw(params: SyntheticSceneParams, rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray]:
    front = front_curve(params, rng)
    left_of_front = np.arange(params.width)[None, :] < front[:, None]
    glacier_on_left = rng.random() < 0.5
    mask = (left_of_front if glacier_on_left else ~left_of_front).astype(np.uint8)

    intensity = np.where(mask == 1, params.glacier_mean, params.melange_mean)
    if params.blob_density > 0:
        intensity = intensity + params.contrast * melange_blobs(params, front, rng) * (mask == 0)
    image = np.clip(intensity * speckle(mask.shape, params.looks, rng), 0.0, 1.0)
    return image.astype(np.float32)[None], mask


def generate_scene(params: SyntheticSceneParams) -> SyntheticScene:
    """Draw one scene; fronts that leave the foreground fraction outside the band are redrawn."""
    params.validate()
    low, high = params.foreground_band
    for attempt in range(MAX_RETRIES + 1):
        rng = np.random.default_rng([params.seed, attempt])
        image, mask = _draw(params, rng)
        fraction = float(mask.mean())
        if low <= fraction <= high:
            return SyntheticScene(image=image, mask=mask, attempts=attempt + 1)
        logger.debug('scene seed %d attempt %d rejected (foreground fraction %.3f)',
                     params.seed, attempt, fraction)
    raise DataError(f'scene seed {params.seed}: no admissible front after {MAX_RETRIES} retries')


def scene_seeds(seed: int, count: int) -> np.ndarray:
    """Distinct per-scene seeds derived from one dataset seed."""
    return np.random.SeedSequence(seed).generate_state(count, dtype=np.uint32)


def generate_scenes(params: SyntheticSceneParams, seed: int, count: int):
    for scene_seed in scene_seeds(seed, count):
        yield generate_scene(replace(params, seed=int(scene_seed)))
