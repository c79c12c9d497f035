from rest_framework import serializers

from engine.layers import ALLOWED_KERNELS

from .models import Stage2Init, ThresholdPolicy
from .metrics import MetricsReport, MetricsRow


class RunConfigSerializer(serializers.Serializer):
    """Validates a merged run configuration (defaults, config file, flags)"""
    name = serializers.RegexField(r'^[A-Za-z0-9_.-]+$', max_length=100)
    run_root = serializers.CharField()
    data_dir = serializers.CharField()
    # network
    base_filters = serializers.IntegerField(min_value=1)
    levels = serializers.IntegerField(min_value=2)
    kernel = serializers.ChoiceField(choices=ALLOWED_KERNELS)
    final_kernel = serializers.ChoiceField(choices=ALLOWED_KERNELS)
    dropout_rate = serializers.FloatField(min_value=0.0)
    patch_size = serializers.IntegerField(min_value=8)
    # optimizer / training
    lr = serializers.FloatField()
    beta1 = serializers.FloatField(min_value=0.0)
    beta2 = serializers.FloatField(min_value=0.0)
    adam_eps = serializers.FloatField(min_value=0.0)
    batch_size = serializers.IntegerField(min_value=1)
    patience = serializers.IntegerField(min_value=1)
    max_epochs = serializers.IntegerField(min_value=1)
    seed = serializers.IntegerField(min_value=0)
    # MC dropout
    mc_samples = serializers.IntegerField(min_value=1)
    mc_workers = serializers.IntegerField(min_value=1)
    mc_seed = serializers.IntegerField(min_value=0)
    threshold_policy = serializers.ChoiceField(choices=ThresholdPolicy.choices)
    threshold_value = serializers.FloatField(min_value=0.0, max_value=0.25)
    mask_threshold = serializers.FloatField(min_value=0.0, max_value=1.0)
    stage2_init = serializers.ChoiceField(choices=Stage2Init.choices)
    boundary_band = serializers.IntegerField(min_value=1)

    def validate_dropout_rate(self, value):
        if value >= 1.0:
            raise serializers.ValidationError('Dropout rate must be below 1.')
        return value

    def validate_lr(self, value):
        if value <= 0:
            raise serializers.ValidationError('Learning rate must be positive.')
        return value

    def validate(self, data):
        for key in ('beta1', 'beta2'):
            if data[key] >= 1.0:
                raise serializers.ValidationError({key: 'Adam betas must be below 1.'})
        return data


class MetricsRowSerializer(serializers.Serializer):
    image_id = serializers.CharField()
    dice = serializers.FloatField()
    iou = serializers.FloatField()

    def create(self, validated_data):
        return MetricsRow(**validated_data)


class MetricsReportSerializer(serializers.Serializer):
    """Machine-readable form of a MetricsReport (metrics.json)"""
    method = serializers.CharField(allow_blank=True)
    split = serializers.CharField()
    mean_dice = serializers.FloatField()
    sd_dice = serializers.FloatField()
    mean_iou = serializers.FloatField()
    sd_iou = serializers.FloatField()
    error_coverage = serializers.FloatField(allow_null=True, required=False)
    boundary_variance = serializers.FloatField(allow_null=True, required=False)
    background_variance = serializers.FloatField(allow_null=True, required=False)
    rows = MetricsRowSerializer(many=True)

    def create(self, validated_data):
        rows = [MetricsRow(**row) for row in validated_data.pop('rows')]
        return MetricsReport(rows=rows, **validated_data)
