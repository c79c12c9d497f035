"""Two-stage uncertainty optimization.

Stage 1 trains a one-channel Bayesian U-Net, then runs MC-dropout prediction
on every image of every split and keeps the per-pixel variance maps. A single
threshold, selected from the training-split maps, binarizes them. Stage 2
trains a fresh network on (image, binarized uncertainty) pairs. The baseline
stage is stage 1 with dropout disabled and a single forward pass.

Run directory layout::

    <run_root>/<name>/<stage>/
        artifacts.json          stage summary read by later stages and commands
        checkpoint.bunt
        training_log.jsonl
        metrics.json
        log
        predictions/<split>/NNNN.pgm
        uncertainty/<split>/NNNN.f32 | NNNN.json | NNNN.pgm
"""
import json
import logging
import math
import shutil
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union

import numpy as np

from engine.bayes import (
    UncertaintyMap, binarize, load_raw_variance, mc_sample, posterior_mean, posterior_variance,
    save_heatmap, save_raw_variance, select_threshold,
)
from engine.checkpoint import TrainingMetadata, load_checkpoint, save_checkpoint
from engine.exceptions import ConfigError, DataError, FormatError, IoError, ShapeError
from engine.optim import TrainingLog, TrainingSet, train
from engine.unet import UNet, build, widen_input
from scenes.dataset import DatasetSplit, Split, load_arrays
from scenes.imageio import load_mask, save_mask
from scenes.tiling import stitch, tile

from . import metrics
from .config import RunConfig
from .models import Stage, Stage2Init, ThresholdPolicy
from .serializers import MetricsReportSerializer

logger = logging.getLogger(__name__)

ARTIFACTS_NAME = 'artifacts.json'
STAGE_LOGGERS = ('engine', 'scenes', 'runs')


# ==================== Layout ====================

@dataclass
class RunLayout:
    run_dir: Path

    def stage_dir(self, stage: str) -> Path:
        return self.run_dir / stage

    def checkpoint(self, stage: str) -> Path:
        return self.stage_dir(stage) / 'checkpoint.bunt'

    def artifacts(self, stage: str) -> Path:
        return self.stage_dir(stage) / ARTIFACTS_NAME

    def training_log(self, stage: str) -> Path:
        return self.stage_dir(stage) / 'training_log.jsonl'

    def metrics(self, stage: str) -> Path:
        return self.stage_dir(stage) / 'metrics.json'

    def log(self, stage: str) -> Path:
        return self.stage_dir(stage) / 'log'

    def predictions_dir(self, stage: str, split: str) -> Path:
        return self.stage_dir(stage) / 'predictions' / split

    def prediction(self, stage: str, split: str, image_id: str) -> Path:
        return self.predictions_dir(stage, split) / f'{image_id}.pgm'

    def uncertainty_dir(self, stage: str, split: str) -> Path:
        return self.stage_dir(stage) / 'uncertainty' / split

    def variance(self, stage: str, split: str, image_id: str) -> Path:
        return self.uncertainty_dir(stage, split) / f'{image_id}.f32'

    def heatmap(self, stage: str, split: str, image_id: str) -> Path:
        return self.uncertainty_dir(stage, split) / f'{image_id}.pgm'

    def completed_stages(self) -> List[str]:
        return [stage for stage in Stage.values if self.artifacts(stage).exists()]


@dataclass
class StageArtifacts:
    stage: str
    stage_dir: Path
    checkpoint: Path
    threshold: Optional[float]
    best_epoch: int
    best_val_loss: float
    data_dir: str
    uncertainty_dirs: Dict[str, str] = field(default_factory=dict)
    reports: Dict[str, metrics.MetricsReport] = field(default_factory=dict)
    training_log: Optional[TrainingLog] = None

    def summary(self) -> dict:
        return {
            'stage': self.stage,
            'checkpoint': self.checkpoint.name,
            'threshold': self.threshold,
            'best_epoch': self.best_epoch,
            'best_val_loss': self.best_val_loss,
            'data_dir': self.data_dir,
            'uncertainty_dirs': self.uncertainty_dirs,
        }


def load_stage_artifacts(layout: RunLayout, stage: str) -> StageArtifacts:
    path = layout.artifacts(stage)
    if not path.exists():
        raise DataError(f'{stage} artifacts not found in {layout.run_dir}')
    try:
        summary = json.loads(path.read_text())
    except ValueError as exc:
        raise FormatError(f'corrupt stage summary {path}: {exc}') from exc
    artifacts = StageArtifacts(
        stage=summary['stage'], stage_dir=layout.stage_dir(stage),
        checkpoint=layout.stage_dir(stage) / summary['checkpoint'],
        threshold=summary['threshold'], best_epoch=summary['best_epoch'],
        best_val_loss=summary['best_val_loss'], data_dir=summary['data_dir'],
        uncertainty_dirs=summary.get('uncertainty_dirs', {}),
    )
    if layout.metrics(stage).exists():
        artifacts.reports = read_metrics(layout.metrics(stage))
    return artifacts


# ==================== Stage logging ====================

@contextmanager
def stage_log(path: Path, header: str):
    """Mirror the project loggers into the stage's log file while the stage runs."""
    handler = logging.FileHandler(path, mode='w', encoding='utf-8')
    handler.setFormatter(logging.Formatter('{asctime} {levelname} {name} {message}', style='{'))
    handler.setLevel(logging.INFO)
    loggers = [logging.getLogger(name) for name in STAGE_LOGGERS]
    for stage_logger in loggers:
        stage_logger.addHandler(handler)
    try:
        handler.stream.write(header + '\n')
        logger.info('stage configuration: %s', header)
        yield handler
    finally:
        for stage_logger in loggers:
            stage_logger.removeHandler(handler)
        handler.close()


def prepare_stage_dir(layout: RunLayout, stage: str, force: bool) -> Path:
    stage_dir = layout.stage_dir(stage)
    if stage_dir.exists() and any(stage_dir.iterdir()):
        if not force:
            raise ConfigError(f'{stage_dir} already exists; pass --force to overwrite it')
        shutil.rmtree(stage_dir)
    try:
        stage_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise IoError(f'cannot create {stage_dir}: {exc}') from exc
    return stage_dir


# ==================== Prediction ====================

@dataclass
class Prediction:
    mask: np.ndarray      # uint8 h×w
    mean: np.ndarray      # float32 h×w
    uncertainty: UncertaintyMap


def _uncertainty(variance: np.ndarray, threshold: Optional[float]) -> UncertaintyMap:
    if threshold is None:
        threshold = select_threshold([variance])
    return UncertaintyMap(variance=variance, binarized=binarize(variance, threshold), threshold=threshold)


def predict(net: UNet, x: np.ndarray, T: int, seed: int, threshold: Optional[float] = None,
            mask_threshold: float = 0.5, workers: int = 1) -> Prediction:
    """MC mean of ``T`` dropout passes thresholded into a mask, plus the variance map.

    Without ``threshold`` the variance is binarized with a threshold selected
    from this map alone.
    """
    x = np.asarray(x, dtype=np.float32)
    if x.ndim != 3:
        raise ShapeError(f'expected a c×h×w image, got shape {x.shape}')
    sample_set = mc_sample(net, x, T, seed, workers)
    mean = posterior_mean(sample_set)[0]
    variance = posterior_variance(sample_set)[0]
    return Prediction(mask=(mean >= mask_threshold).astype(np.uint8), mean=mean,
                      uncertainty=_uncertainty(variance, threshold))


def predict_tiled(net: UNet, x: np.ndarray, T: int, seed: int, patch: int, stride: int,
                  threshold: Optional[float] = None, mask_threshold: float = 0.5, workers: int = 1) -> Prediction:
    """Predict a scene larger than ``patch`` tile by tile; means and variances are averaged where tiles overlap."""
    x = np.asarray(x, dtype=np.float32)
    height, width = x.shape[1:]
    if height <= patch and width <= patch:
        return predict(net, x, T, seed, threshold, mask_threshold, workers)
    patches, positions = tile(x, patch, stride)
    means, variances = [], []
    for index, piece in enumerate(patches):
        sample_set = mc_sample(net, piece, T, seed + index * T, workers)
        means.append(posterior_mean(sample_set)[0][None])
        variances.append(posterior_variance(sample_set)[0][None])
    mean = stitch(means, positions, height, width)[0]
    variance = stitch(variances, positions, height, width)[0]
    return Prediction(mask=(mean >= mask_threshold).astype(np.uint8), mean=mean,
                      uncertainty=_uncertainty(variance, threshold))


# ==================== Evaluation ====================

def _finite(value: float) -> Optional[float]:
    return None if value is None or math.isnan(value) else float(value)


def evaluate_stage(layout: RunLayout, stage: str, dataset: DatasetSplit, split: str,
                   threshold: Optional[float] = None, band: int = 5) -> metrics.MetricsReport:
    """Score a stage's stored predictions against the ground truth of one split.

    When the stage stored uncertainty maps, the report also carries the share
    of misclassified pixels flagged uncertain and the mean variance inside and
    outside the boundary band.
    """
    rows, coverages, inside, outside = [], [], [], []
    for pair in dataset.split(split):
        path = layout.prediction(stage, split, pair.image_id)
        if not path.exists():
            raise DataError(f'{stage} has no prediction for {split}/{pair.image_id}')
        pred = load_mask(path)
        gt = load_mask(dataset.mask_path(pair))
        rows.append(metrics.score(pair.image_id, pred, gt))

        variance_path = layout.variance(stage, split, pair.image_id)
        if threshold is not None and variance_path.exists():
            variance, _ = load_raw_variance(variance_path)
            coverages.append(metrics.error_coverage(pred, gt, binarize(variance, threshold)))
            band_mean, rest_mean = metrics.boundary_localization(variance, gt, band)
            inside.append(band_mean)
            outside.append(rest_mean)

    report = metrics.aggregate(rows, method=Stage(stage).label, split=split)
    if coverages:
        report.error_coverage = float(np.mean(coverages))
        report.boundary_variance = _finite(float(np.nanmean(inside))) if not np.all(np.isnan(inside)) else None
        report.background_variance = _finite(float(np.nanmean(outside))) if not np.all(np.isnan(outside)) else None
    return report


def write_metrics(path: Path, reports: Dict[str, metrics.MetricsReport]) -> None:
    payload = {split: MetricsReportSerializer(report).data for split, report in reports.items()}
    try:
        path.write_text(json.dumps(payload, indent=2, sort_keys=True) + '\n')
    except OSError as exc:
        raise IoError(f'cannot write metrics {path}: {exc}') from exc


def read_metrics(path: Path) -> Dict[str, metrics.MetricsReport]:
    try:
        payload = json.loads(path.read_text())
    except OSError as exc:
        raise IoError(f'cannot read metrics {path}: {exc}') from exc
    except ValueError as exc:
        raise FormatError(f'corrupt metrics file {path}: {exc}') from exc
    reports = {}
    for split, data in payload.items():
        serializer = MetricsReportSerializer(data=data)
        if not serializer.is_valid():
            raise FormatError(f'{path} [{split}]: {dict(serializer.errors)}')
        reports[split] = serializer.save()
    return reports


# ==================== Stages ====================

def _sets_with_uncertainty(dataset: DatasetSplit, layout: RunLayout, source: StageArtifacts) -> Dict[str, TrainingSet]:
    """Two-channel inputs: image at channel 0, binarized stage-1 variance at channel 1."""
    sets = {}
    for split in Split.values:
        base = load_arrays(dataset, split)
        channels = []
        for image_id in base.ids:
            path = layout.variance(source.stage, split, image_id)
            if not path.exists():
                raise DataError(f'missing {source.stage} uncertainty map for {split}/{image_id}')
            variance, _ = load_raw_variance(path)
            if variance.shape != base.images.shape[2:]:
                raise ShapeError(f'uncertainty map {path} has shape {variance.shape}')
            channels.append(binarize(variance, source.threshold)[None].astype(np.float32))
        images = np.concatenate([base.images, np.stack(channels)], axis=1)
        sets[split] = TrainingSet(images, base.masks, base.ids)
    return sets


def _run_stage(stage: str, config: RunConfig, dataset: DatasetSplit, sets: Dict[str, TrainingSet],
               net: UNet, force: bool, threshold: Optional[float] = None,
               keep_uncertainty: bool = True) -> StageArtifacts:
    layout = RunLayout(config.run_dir)
    stage_dir = prepare_stage_dir(layout, stage, force)

    with stage_log(layout.log(stage), config.header()):
        logger.info('%s: training a %d-channel network on %d images (validation %d)', stage,
                    net.spec.in_channels, len(sets[Split.TRAIN]), len(sets[Split.VAL]))
        trained, training_log = train(net, sets[Split.TRAIN], sets[Split.VAL], config.training_config())
        training_log.write_jsonl(layout.training_log(stage))

        # seeds run across splits in train, val, test order so no two images share a pass
        variances: Dict[Tuple[str, str], np.ndarray] = {}
        offset = 0
        for split in Split.values:
            data = sets[split]
            for index, image_id in enumerate(data.ids):
                seed = config.mc_seed + (offset + index) * config.mc_samples
                result = predict(trained.net, data.images[index], config.mc_samples, seed,
                                 mask_threshold=config.mask_threshold, workers=config.mc_workers)
                save_mask(result.mask, layout.prediction(stage, split, image_id))
                variances[split, image_id] = result.uncertainty.variance
            offset += len(data)
            logger.info('%s: predicted %d %s images', stage, len(data), split)

        if keep_uncertainty and threshold is None:
            if ThresholdPolicy(config.threshold_policy) == ThresholdPolicy.FIXED:
                threshold = config.threshold_value
            else:
                threshold = select_threshold(v for (split, _), v in variances.items() if split == Split.TRAIN)
            logger.info('%s: uncertainty threshold %.6g', stage, threshold)

        uncertainty_dirs = {}
        if keep_uncertainty:
            for (split, image_id), variance in variances.items():
                layout.uncertainty_dir(stage, split).mkdir(parents=True, exist_ok=True)
                save_raw_variance(variance, layout.variance(stage, split, image_id), threshold)
                save_heatmap(variance, layout.heatmap(stage, split, image_id))
            uncertainty_dirs = {split: str(layout.uncertainty_dir(stage, split).relative_to(stage_dir))
                                for split in Split.values}

        metadata = TrainingMetadata(epoch=trained.best_epoch, val_loss=trained.best_val_loss,
                                    seed=config.seed, threshold=threshold, stage=stage)
        save_checkpoint(trained.net, layout.checkpoint(stage), metadata)

        reports = {split: evaluate_stage(layout, stage, dataset, split, threshold, config.boundary_band)
                   for split in Split.values}
        write_metrics(layout.metrics(stage), reports)
        test = reports[Split.TEST]
        logger.info('%s: test dice %.4f (± %.4f), iou %.4f (± %.4f)',
                    stage, test.mean_dice, test.sd_dice, test.mean_iou, test.sd_iou)

    artifacts = StageArtifacts(
        stage=stage, stage_dir=stage_dir, checkpoint=layout.checkpoint(stage), threshold=threshold,
        best_epoch=trained.best_epoch, best_val_loss=trained.best_val_loss, data_dir=str(dataset.root),
        uncertainty_dirs=uncertainty_dirs, reports=reports, training_log=training_log,
    )
    layout.artifacts(stage).write_text(json.dumps(artifacts.summary(), indent=2, sort_keys=True) + '\n')
    return artifacts


def run_stage1(config: RunConfig, dataset: DatasetSplit, force: bool = False) -> StageArtifacts:
    """Train the one-channel network and produce uncertainty maps for every image."""
    sets = {split: load_arrays(dataset, split) for split in Split.values}
    net = build(config.unet_spec(in_channels=1), seed=config.seed)
    return _run_stage(Stage.STAGE1, config, dataset, sets, net, force)


def run_baseline(config: RunConfig, dataset: DatasetSplit, force: bool = False) -> StageArtifacts:
    """Deterministic comparison network: stage 1 without dropout and with a single pass."""
    config = config.as_baseline()
    sets = {split: load_arrays(dataset, split) for split in Split.values}
    net = build(config.unet_spec(in_channels=1), seed=config.seed)
    return _run_stage(Stage.BASELINE, config, dataset, sets, net, force, keep_uncertainty=False)


def run_stage2(config: RunConfig, dataset: DatasetSplit, stage1: Optional[StageArtifacts] = None,
               force: bool = False) -> StageArtifacts:
    """Train the two-channel network on images stacked with binarized stage-1 uncertainty."""
    layout = RunLayout(config.run_dir)
    stage1 = stage1 or load_stage_artifacts(layout, Stage.STAGE1)
    if stage1.threshold is None:
        raise DataError('stage1 artifacts carry no uncertainty threshold')
    sets = _sets_with_uncertainty(dataset, layout, stage1)

    if Stage2Init(config.stage2_init) == Stage2Init.FINETUNE:
        net = widen_input(load_checkpoint(stage1.checkpoint), in_channels=2, seed=config.seed)
    else:
        net = build(config.unet_spec(in_channels=2), seed=config.seed)
    return _run_stage(Stage.STAGE2, config, dataset, sets, net, force, threshold=stage1.threshold)


def resolve_run_dir(run: Union[str, Path], run_root: Union[str, Path]) -> Path:
    """A run given by path, or by name under the run root."""
    path = Path(run)
    if path.is_dir():
        return path
    return Path(run_root) / str(run)
