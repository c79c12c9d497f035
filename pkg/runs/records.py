"""Database bookkeeping for completed stages."""
import logging
from typing import List, Optional

from django.db import transaction
from django.db.models import Count
from django.utils import timezone
from django.utils.dateparse import parse_datetime

from .config import RunConfig
from .models import EpochRecord, MetricRow, Run, Stage, StageResult

logger = logging.getLogger(__name__)


@transaction.atomic
def record_stage(config: RunConfig, artifacts) -> StageResult:
    """Store a stage outcome, replacing any earlier record of the same stage."""
    run, _ = Run.objects.update_or_create(
        name=config.name,
        defaults={'run_dir': str(config.run_dir), 'config': config.to_dict()},
    )
    StageResult.objects.filter(run=run, stage=artifacts.stage).delete()

    test = artifacts.reports.get('test')
    result = StageResult.objects.create(
        run=run,
        stage=artifacts.stage,
        checkpoint_path=str(artifacts.checkpoint),
        threshold=artifacts.threshold,
        best_epoch=artifacts.best_epoch,
        best_val_loss=artifacts.best_val_loss,
        mean_dice=test.mean_dice if test else None,
        mean_iou=test.mean_iou if test else None,
    )

    if artifacts.training_log is not None:
        EpochRecord.objects.bulk_create([
            EpochRecord(
                stage_result=result, epoch=record.epoch, train_loss=record.train_loss,
                val_loss=record.val_loss, timestamp=parse_datetime(record.timestamp) or timezone.now(),
            )
            for record in artifacts.training_log.records
        ])
    MetricRow.objects.bulk_create([
        MetricRow(stage_result=result, split=split, image_id=row.image_id, dice=row.dice, iou=row.iou)
        for split, report in artifacts.reports.items()
        for row in report.rows
    ])
    logger.info('recorded %s for run %s', artifacts.stage, run.name)
    return result


def run_history(name: Optional[str] = None) -> List[str]:
    """One line per recorded run and one per trained stage, newest run first."""
    runs = Run.objects.all()
    if name:
        runs = runs.filter(name=name)
    lines = []
    for run in runs:
        lines.append(str(run))
        stages = run.stages.annotate(
            epoch_count=Count('epochs', distinct=True), row_count=Count('metric_rows', distinct=True),
        )
        for result in stages:
            threshold = 'n/a' if result.threshold is None else f'{result.threshold:.6f}'
            dice = 'n/a' if result.mean_dice is None else f'{100 * result.mean_dice:.2f}'
            iou = 'n/a' if result.mean_iou is None else f'{100 * result.mean_iou:.2f}'
            lines.append(
                f'  {Stage(result.stage).label}: best epoch {result.best_epoch}/{result.epoch_count}, '
                f'threshold {threshold}, test Dice% {dice}, IoU% {iou}, '
                f'{result.row_count} scored images ({result.completed_at:%Y-%m-%d %H:%M})'
            )
    return lines
