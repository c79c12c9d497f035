from django.db import models


class Stage(models.TextChoices):
    BASELINE = 'baseline', 'U-Net (deterministic)'
    STAGE1 = 'stage1', 'Bayesian U-Net I'
    STAGE2 = 'stage2', 'Bayesian U-Net II'


class ThresholdPolicy(models.TextChoices):
    HISTOGRAM_AUTO = 'histogram_auto', 'Histogram (last bin edge)'
    FIXED = 'fixed', 'Fixed value'


class Stage2Init(models.TextChoices):
    SCRATCH = 'scratch', 'Fresh initialization'
    FINETUNE = 'finetune', 'Start from stage-1 weights'


class Run(models.Model):
    """A named run directory and the configuration it was started with"""
    name = models.CharField(max_length=100, unique=True)
    run_dir = models.CharField(max_length=500)
    config = models.JSONField(default=dict)
    created_at = models.DateTimeField(auto_now_add=True)

    class Meta:
        ordering = ['-created_at']

    def __str__(self):
        return f"{self.name} ({self.run_dir})"


class StageResult(models.Model):
    """Outcome of one training stage inside a run"""
    run = models.ForeignKey(Run, on_delete=models.CASCADE, related_name='stages')
    stage = models.CharField(max_length=10, choices=Stage.choices)
    checkpoint_path = models.CharField(max_length=500)
    threshold = models.FloatField(null=True, blank=True)
    best_epoch = models.IntegerField(default=0)
    best_val_loss = models.FloatField(null=True, blank=True)
    mean_dice = models.FloatField(null=True, blank=True)
    mean_iou = models.FloatField(null=True, blank=True)
    completed_at = models.DateTimeField(auto_now=True)

    class Meta:
        unique_together = ('run', 'stage')
        ordering = ['run', 'stage']

    def __str__(self):
        dice = f"{self.mean_dice:.4f}" if self.mean_dice is not None else "n/a"
        return f"{self.run.name}/{self.stage} - dice {dice}"


class EpochRecord(models.Model):
    """One row of a stage's training log"""
    stage_result = models.ForeignKey(StageResult, on_delete=models.CASCADE, related_name='epochs')
    epoch = models.IntegerField()
    train_loss = models.FloatField()
    val_loss = models.FloatField()
    timestamp = models.DateTimeField()

    class Meta:
        ordering = ['stage_result', 'epoch']

    def __str__(self):
        return f"epoch {self.epoch}: train {self.train_loss:.4f}, val {self.val_loss:.4f}"


class MetricRow(models.Model):
    """Per-image Dice/IoU of a stage on one split"""
    stage_result = models.ForeignKey(StageResult, on_delete=models.CASCADE, related_name='metric_rows')
    split = models.CharField(max_length=5)
    image_id = models.CharField(max_length=20)
    dice = models.FloatField()
    iou = models.FloatField()

    class Meta:
        ordering = ['stage_result', 'split', 'image_id']

    def __str__(self):
        return f"{self.split}/{self.image_id}: dice {self.dice:.4f}, iou {self.iou:.4f}"
