"""Overlap metrics for binary glacier masks and their mean ± SD aggregation.

Dice and IoU are computed on the foreground (glacier) class from the same
pixel counts, so ``dice == 2 * iou / (1 + iou)`` for every pair. Two empty
masks score 1.0.
"""
from dataclasses import dataclass
from typing import Iterable, List, Optional, Sequence, Tuple

import numpy as np
from scipy.ndimage import distance_transform_edt

from engine.exceptions import ContractError, DataError, ShapeError


def _as_binary(mask, name: str) -> np.ndarray:
    mask = np.asarray(mask)
    if mask.size and not np.isin(mask, (0, 1)).all():
        raise ContractError(f'{name} must be a binary mask with values in {{0, 1}}')
    return mask.astype(bool)


def overlap_counts(pred, gt) -> Tuple[int, int, int]:
    """(|P∩G|, |P|, |G|)"""
    pred, gt = _as_binary(pred, 'prediction'), _as_binary(gt, 'ground truth')
    if pred.shape != gt.shape:
        raise ShapeError(f'prediction {pred.shape} and ground truth {gt.shape} differ in shape')
    return int(np.count_nonzero(pred & gt)), int(np.count_nonzero(pred)), int(np.count_nonzero(gt))


def dice(pred, gt) -> float:
    intersection, p, g = overlap_counts(pred, gt)
    if p + g == 0:
        return 1.0
    return 2.0 * intersection / (p + g)


def iou(pred, gt) -> float:
    intersection, p, g = overlap_counts(pred, gt)
    union = p + g - intersection
    if union == 0:
        return 1.0
    return intersection / union


@dataclass
class MetricsRow:
    image_id: str
    dice: float
    iou: float


@dataclass
class MetricsReport:
    method: str
    rows: List[MetricsRow]
    mean_dice: float
    sd_dice: float
    mean_iou: float
    sd_iou: float
    split: str = 'test'
    # uncertainty diagnostics, filled in for stochastic methods
    error_coverage: Optional[float] = None
    boundary_variance: Optional[float] = None
    background_variance: Optional[float] = None


def score(image_id: str, pred, gt) -> MetricsRow:
    return MetricsRow(image_id=image_id, dice=dice(pred, gt), iou=iou(pred, gt))


def aggregate(rows: Sequence[MetricsRow], method: str = '', split: str = 'test') -> MetricsReport:
    """Arithmetic mean and population SD of the per-image scores."""
    if not rows:
        raise DataError(f'no per-image scores to aggregate for {method or "report"}')
    dices = np.array([row.dice for row in rows], dtype=np.float64)
    ious = np.array([row.iou for row in rows], dtype=np.float64)
    return MetricsReport(
        method=method, rows=list(rows), split=split,
        mean_dice=float(dices.mean()), sd_dice=float(dices.std()),
        mean_iou=float(ious.mean()), sd_iou=float(ious.std()),
    )


def percent(mean: float, sd: float) -> str:
    return f'{100 * mean:.2f} (± {100 * sd:.2f})'


def format_table(reports: Iterable[MetricsReport]) -> str:
    """Console table laid out like the published comparison (method, image set, Dice%, IoU%)."""
    header = ('Method', 'Image', 'Dice% (± SD)', 'IoU% (± SD)')
    body = [(r.method, f'{r.split} set ({len(r.rows)})', percent(r.mean_dice, r.sd_dice),
             percent(r.mean_iou, r.sd_iou)) for r in reports]
    widths = [max(len(row[column]) for row in [header] + body) for column in range(len(header))]
    lines = ['  '.join(cell.ljust(width) for cell, width in zip(row, widths)).rstrip()
             for row in [header] + body]
    lines.insert(1, '  '.join('-' * width for width in widths))
    return '\n'.join(lines)


def format_rows(reports: Sequence[MetricsReport]) -> str:
    """Per-image Dice/IoU of every method side by side, closed by the aggregate row."""
    ids = list(dict.fromkeys(row.image_id for report in reports for row in report.rows))
    scores = [{row.image_id: row for row in report.rows} for report in reports]
    header = ['Image']
    for report in reports:
        header += [f'{report.method} Dice%', f'{report.method} IoU%']
    body = []
    for image_id in ids:
        cells = [image_id]
        for by_id in scores:
            row = by_id.get(image_id)
            cells += [f'{100 * row.dice:.2f}', f'{100 * row.iou:.2f}'] if row else ['-', '-']
        body.append(cells)
    footer = ['mean (± SD)']
    for r in reports:
        footer += [percent(r.mean_dice, r.sd_dice), percent(r.mean_iou, r.sd_iou)]
    rows = [header] + body + [footer]
    widths = [max(len(row[column]) for row in rows) for column in range(len(header))]
    lines = ['  '.join(cell.ljust(width) for cell, width in zip(row, widths)).rstrip() for row in rows]
    rule = '  '.join('-' * width for width in widths)
    lines.insert(1, rule)
    lines.insert(len(lines) - 1, rule)
    return '\n'.join(lines)


# ==================== Uncertainty diagnostics ====================

def error_coverage(pred, gt, uncertain) -> float:
    """Fraction of misclassified pixels flagged as uncertain; 1.0 when nothing is wrong."""
    pred, gt = _as_binary(pred, 'prediction'), _as_binary(gt, 'ground truth')
    uncertain = _as_binary(uncertain, 'uncertainty mask')
    if not pred.shape == gt.shape == uncertain.shape:
        raise ShapeError('prediction, ground truth and uncertainty mask must share a shape')
    errors = pred != gt
    total = np.count_nonzero(errors)
    if total == 0:
        return 1.0
    return np.count_nonzero(errors & uncertain) / total


def boundary_band(gt, width: int) -> np.ndarray:
    """Pixels within ``width`` pixels (Euclidean) of the class transition."""
    gt = _as_binary(gt, 'ground truth')
    if gt.all() or not gt.any():
        return np.zeros(gt.shape, dtype=bool)
    # each pixel's distance to the nearest pixel of the other class
    distance = np.where(gt, distance_transform_edt(gt), distance_transform_edt(~gt))
    return distance <= width


def boundary_localization(variance, gt, width: int = 5) -> Tuple[float, float]:
    """(mean variance inside the boundary band, mean variance outside it)"""
    variance = np.asarray(variance, dtype=np.float64)
    band = boundary_band(gt, width)
    if band.shape != variance.shape:
        raise ShapeError(f'variance {variance.shape} and ground truth {band.shape} differ in shape')
    inside = float(variance[band].mean()) if band.any() else float('nan')
    outside = float(variance[~band].mean()) if not band.all() else float('nan')
    return inside, outside
