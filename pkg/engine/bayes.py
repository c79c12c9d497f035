"""Monte-Carlo dropout: stochastic forward passes, posterior moments, uncertainty maps.

The posterior mean is the average of T sigmoid outputs with dropout active,
and the uncertainty is their population variance (1/T normalization). Batch
norm stays in eval mode while sampling, so dropout is the only randomness.
"""
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional, Tuple, Union

import numpy as np
from PIL import Image

from .exceptions import ConfigError, DataError, FormatError, IoError
from .layers import BatchNormMode, DropoutMode
from .tensor import Tensor

logger = logging.getLogger(__name__)

VARIANCE_CEILING = 0.25
HISTOGRAM_BINS = 10


@dataclass
class McSampleSet:
    """T stochastic outputs for one input, stacked as T×1×h×w."""

    samples: np.ndarray
    seed_base: int

    @property
    def T(self) -> int:
        return self.samples.shape[0]


@dataclass
class UncertaintyMap:
    variance: np.ndarray
    binarized: np.ndarray
    threshold: float


def _as_batch(x: Union[Tensor, np.ndarray]) -> Tensor:
    data = x.data if isinstance(x, Tensor) else np.asarray(x, dtype=np.float32)
    if data.ndim == 3:
        data = data[None]
    return Tensor(data)


def mc_sample(net, x: Union[Tensor, np.ndarray], T: int, seed_base: int, workers: int = 1) -> McSampleSet:
    """Run ``T`` forward passes with dropout active; pass t draws from seed ``seed_base + t``.

    ``net`` is only read, so passes may run on a thread pool; results are
    stacked in pass order either way.
    """
    if T < 1:
        raise ConfigError(f'number of MC samples must be at least 1, got {T}')
    batch = _as_batch(x)
    if batch.shape[0] != 1:
        raise ConfigError('mc_sample takes a single image')

    def one_pass(t: int) -> np.ndarray:
        rng = np.random.default_rng(seed_base + t)
        return net.forward(batch, DropoutMode.ACTIVE, BatchNormMode.EVAL, rng).data[0]

    if workers > 1 and T > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            outputs = list(pool.map(one_pass, range(T)))
    else:
        outputs = [one_pass(t) for t in range(T)]
    return McSampleSet(samples=np.stack(outputs).astype(np.float32), seed_base=seed_base)


def posterior_mean(sample_set: McSampleSet) -> np.ndarray:
    return sample_set.samples.mean(axis=0, dtype=np.float64).astype(np.float32)


def posterior_variance(sample_set: McSampleSet) -> np.ndarray:
    """Population variance (1/T)Σp² − mean², clamped at zero."""
    samples = sample_set.samples.astype(np.float64)
    mean = samples.mean(axis=0)
    variance = (samples * samples).mean(axis=0) - mean * mean
    return np.maximum(variance, 0.0).astype(np.float32)


def select_threshold(variances: Iterable[np.ndarray]) -> float:
    """Lower edge of the last bin of a 10-bin histogram over the pooled values."""
    arrays = [np.asarray(v, dtype=np.float64).ravel() for v in variances]
    arrays = [a for a in arrays if a.size]
    if not arrays:
        raise DataError('cannot select a threshold from no variance values')
    pooled = np.concatenate(arrays)
    low, high = float(pooled.min()), float(pooled.max())
    if high == low:
        return high
    edges = np.histogram_bin_edges(pooled, bins=HISTOGRAM_BINS, range=(low, high))
    return float(edges[-2])


def binarize(variance: np.ndarray, threshold: float) -> np.ndarray:
    return (np.asarray(variance) >= threshold).astype(np.uint8)


def uncertainty_map(sample_set: McSampleSet, threshold: float) -> UncertaintyMap:
    variance = posterior_variance(sample_set)[0]
    return UncertaintyMap(variance=variance, binarized=binarize(variance, threshold), threshold=threshold)


# ==================== Export ====================

def variance_to_uint8(variance: np.ndarray) -> np.ndarray:
    scaled = np.clip(np.asarray(variance, dtype=np.float64) / VARIANCE_CEILING, 0.0, 1.0) * 255.0
    return np.rint(scaled).astype(np.uint8)


def save_heatmap(variance: np.ndarray, path: Union[str, Path]) -> Path:
    """Grayscale heatmap: variance 0 → 0, variance 0.25 → 255."""
    path = Path(path)
    try:
        Image.fromarray(variance_to_uint8(variance)).save(path)
    except OSError as exc:
        raise IoError(f'cannot write heatmap {path}: {exc}') from exc
    return path


def save_raw_variance(variance: np.ndarray, path: Union[str, Path], threshold: Optional[float]) -> Tuple[Path, Path]:
    """Write ``<name>.f32`` (little-endian float32) and a ``<name>.json`` sidecar."""
    path = Path(path).with_suffix('.f32')
    sidecar = path.with_suffix('.json')
    array = np.ascontiguousarray(variance, dtype='<f4')
    description = {'dtype': 'float32-le', 'shape': list(array.shape), 'threshold': threshold}
    try:
        path.write_bytes(array.tobytes())
        sidecar.write_text(json.dumps(description, sort_keys=True) + '\n')
    except OSError as exc:
        raise IoError(f'cannot write variance map {path}: {exc}') from exc
    return path, sidecar


def load_raw_variance(path: Union[str, Path]) -> Tuple[np.ndarray, Optional[float]]:
    path = Path(path).with_suffix('.f32')
    sidecar = path.with_suffix('.json')
    try:
        description = json.loads(sidecar.read_text())
        payload = path.read_bytes()
    except OSError as exc:
        raise IoError(f'cannot read variance map {path}: {exc}') from exc
    except ValueError as exc:
        raise FormatError(f'corrupt variance sidecar {sidecar}: {exc}') from exc
    shape = tuple(description.get('shape', ()))
    if len(payload) != 4 * int(np.prod(shape, dtype=np.int64)):
        raise FormatError(f'{path} holds {len(payload)} bytes, sidecar declares shape {shape}')
    variance = np.frombuffer(payload, dtype='<f4').reshape(shape).astype(np.float32)
    return variance, description.get('threshold')
