"""Qualitative figures: per-image comparison strips and front overlays."""
import logging
from pathlib import Path
from typing import List, Optional

import numpy as np
from PIL import Image
from scipy.ndimage import binary_erosion

from engine.bayes import load_raw_variance, variance_to_uint8
from engine.exceptions import IoError
from scenes.dataset import DatasetSplit, ScenePair
from scenes.imageio import load_mask, read_gray

from .models import Stage
from .pipeline import RunLayout

logger = logging.getLogger(__name__)

GAP = 4
GROUND_TRUTH_COLOUR = (0, 200, 0)
PREDICTION_COLOUR = (230, 30, 30)


def front_pixels(mask: np.ndarray) -> np.ndarray:
    """Foreground pixels with at least one background 4-neighbour inside the image."""
    mask = np.asarray(mask).astype(bool)
    return mask & ~binary_erosion(mask, border_value=1)


def comparison_strip(panels: List[np.ndarray]) -> np.ndarray:
    """Side-by-side uint8 panels separated by white gaps."""
    height = panels[0].shape[0]
    gap = np.full((height, GAP), 255, dtype=np.uint8)
    pieces = []
    for panel in panels:
        pieces.extend([panel.astype(np.uint8), gap])
    return np.concatenate(pieces[:-1], axis=1)


def front_overlay(image: np.ndarray, truth: np.ndarray, prediction: Optional[np.ndarray]) -> np.ndarray:
    rgb = np.repeat(np.asarray(image, dtype=np.uint8)[..., None], 3, axis=2)
    rgb[front_pixels(truth)] = GROUND_TRUTH_COLOUR
    if prediction is not None:
        rgb[front_pixels(prediction)] = PREDICTION_COLOUR
    return rgb


def _panels(layout: RunLayout, dataset: DatasetSplit, split: str, pair: ScenePair, stages: List[str]):
    image = read_gray(dataset.image_path(pair))
    truth = load_mask(dataset.mask_path(pair))
    panels = [image, truth * 255]
    predictions = {}
    for stage in stages:
        path = layout.prediction(stage, split, pair.image_id)
        if path.exists():
            predictions[stage] = load_mask(path)
            panels.append(predictions[stage] * 255)
    for stage in stages:
        path = layout.variance(stage, split, pair.image_id)
        if path.exists():
            variance, _ = load_raw_variance(path)
            panels.append(variance_to_uint8(variance))
    return image, truth, predictions, panels


def write_figures(layout: RunLayout, dataset: DatasetSplit, split: str, out: Path,
                  limit: Optional[int] = None) -> List[Path]:
    """Write ``NNNN_strip.png`` and ``NNNN_overlay.png`` for the images of ``split``."""
    stages = [stage for stage in Stage.values if layout.stage_dir(stage).exists()]
    pairs = dataset.split(split)[:limit]
    written = []
    for pair in pairs:
        image, truth, predictions, panels = _panels(layout, dataset, split, pair, stages)
        # the overlay shows the last stage that has a prediction
        latest = predictions[max(predictions, key=stages.index)] if predictions else None
        strip_path = out / f'{pair.image_id}_strip.png'
        overlay_path = out / f'{pair.image_id}_overlay.png'
        try:
            out.mkdir(parents=True, exist_ok=True)
            Image.fromarray(comparison_strip(panels)).save(strip_path)
            Image.fromarray(front_overlay(image, truth, latest)).save(overlay_path)
        except OSError as exc:
            raise IoError(f'cannot write figures to {out}: {exc}') from exc
        written.extend([strip_path, overlay_path])
    logger.info('wrote %d figures for %d %s images to %s', len(written), len(pairs), split, out)
    return written
