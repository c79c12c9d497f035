"""Run configuration: settings defaults, overridden by a JSON file, overridden by flags."""
import json
import logging
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path
from typing import Optional, Union

from django.conf import settings

from engine.exceptions import ConfigError, IoError
from engine.optim import TrainingConfig
from engine.unet import UNetSpec

from .models import Stage2Init, ThresholdPolicy
from .serializers import RunConfigSerializer

logger = logging.getLogger(__name__)

# fields echoed at the top of every stage log
HEADER_FIELDS = ('lr', 'patience', 'max_epochs', 'mc_samples', 'dropout_rate')


@dataclass(frozen=True)
class RunConfig:
    name: str = 'default'
    run_root: str = ''
    data_dir: str = ''
    base_filters: int = 32
    levels: int = 5
    kernel: int = 5
    final_kernel: int = 3
    dropout_rate: float = 0.5
    patch_size: int = 256
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    batch_size: int = 4
    patience: int = 30
    max_epochs: int = 250
    seed: int = 0
    mc_samples: int = 20
    mc_workers: int = 1
    mc_seed: int = 0
    threshold_policy: str = ThresholdPolicy.HISTOGRAM_AUTO
    threshold_value: float = 0.125
    mask_threshold: float = 0.5
    stage2_init: str = Stage2Init.SCRATCH
    boundary_band: int = 5

    @property
    def run_dir(self) -> Path:
        return Path(self.run_root) / self.name

    def unet_spec(self, in_channels: int = 1) -> UNetSpec:
        return UNetSpec(
            in_channels=in_channels, base_filters=self.base_filters, levels=self.levels,
            kernel=self.kernel, dropout_rate=self.dropout_rate, final_kernel=self.final_kernel,
        )

    def training_config(self) -> TrainingConfig:
        return TrainingConfig(
            lr=self.lr, beta1=self.beta1, beta2=self.beta2, eps=self.adam_eps,
            batch_size=self.batch_size, patience=self.patience, max_epochs=self.max_epochs, seed=self.seed,
        )

    def as_baseline(self) -> 'RunConfig':
        """Deterministic comparison mode: no dropout, a single forward pass."""
        return replace(self, dropout_rate=0.0, mc_samples=1)

    def header(self) -> str:
        return ' '.join(f'{key}={getattr(self, key)}' for key in HEADER_FIELDS)

    def to_dict(self) -> dict:
        return {key: str(value) if key in ('threshold_policy', 'stage2_init') else value
                for key, value in asdict(self).items()}


def default_values() -> dict:
    conf = settings.GLACIER_SEG
    return {
        'name': 'default',
        'run_root': str(settings.RUN_ROOT),
        'data_dir': str(settings.DATA_DIR),
        'base_filters': conf['BASE_FILTERS'],
        'levels': conf['LEVELS'],
        'kernel': conf['KERNEL'],
        'final_kernel': conf['FINAL_KERNEL'],
        'dropout_rate': conf['DROPOUT_RATE'],
        'patch_size': conf['PATCH_SIZE'],
        'lr': conf['LEARNING_RATE'],
        'beta1': conf['BETA1'],
        'beta2': conf['BETA2'],
        'adam_eps': conf['ADAM_EPS'],
        'batch_size': conf['BATCH_SIZE'],
        'patience': conf['PATIENCE'],
        'max_epochs': conf['MAX_EPOCHS'],
        'seed': conf['SEED'],
        'mc_samples': conf['MC_SAMPLES'],
        'mc_workers': conf['MC_WORKERS'],
        'mc_seed': conf['SEED'],
        'threshold_policy': conf['THRESHOLD_POLICY'],
        'threshold_value': conf['THRESHOLD_VALUE'],
        'mask_threshold': conf['MASK_THRESHOLD'],
        'stage2_init': conf['STAGE2_INIT'],
        'boundary_band': conf['BOUNDARY_BAND'],
    }


def read_config_file(path: Union[str, Path]) -> dict:
    try:
        values = json.loads(Path(path).read_text())
    except OSError as exc:
        raise IoError(f'cannot read config file {path}: {exc}') from exc
    except ValueError as exc:
        raise ConfigError(f'config file {path} is not valid JSON: {exc}') from exc
    if not isinstance(values, dict):
        raise ConfigError(f'config file {path} must hold a JSON object')
    return values


def load_run_config(path: Optional[Union[str, Path]] = None, overrides: Optional[dict] = None) -> RunConfig:
    """Merge defaults, the optional config file and non-None overrides, then validate."""
    values = default_values()
    if path is not None:
        values.update(read_config_file(path))
    values.update({key: value for key, value in (overrides or {}).items() if value is not None})

    known = {f.name for f in fields(RunConfig)}
    unknown = sorted(set(values) - known)
    if unknown:
        raise ConfigError(f'unknown configuration keys: {", ".join(unknown)}')

    serializer = RunConfigSerializer(data=values)
    if not serializer.is_valid():
        raise ConfigError(f'invalid run configuration: {dict(serializer.errors)}')
    config = RunConfig(**serializer.validated_data)
    logger.debug('run configuration %s', config)
    return config
