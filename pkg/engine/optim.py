"""Adam, early stopping and the epoch training loop."""
import json
import logging
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Callable, List, Optional, Sequence, Tuple, Union

import numpy as np

from .exceptions import ConfigError, ContractError, DataError, DivergenceError, IoError, ShapeError
from .layers import BatchNormMode, DropoutMode, bce_loss
from .tensor import ComputationTape, Tensor, backward

logger = logging.getLogger(__name__)


# ==================== Adam ====================

@dataclass
class AdamState:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    m: List[np.ndarray] = field(default_factory=list)
    v: List[np.ndarray] = field(default_factory=list)
    t: int = 0


def adam_step(state: AdamState, params: Sequence[Tensor]) -> None:
    """One bias-corrected Adam update; clears the gradients afterwards."""
    missing = [index for index, param in enumerate(params) if param.grad is None]
    if missing:
        raise ContractError(f'parameters {missing} have no gradient')
    if not state.m:
        state.m = [np.zeros_like(param.data) for param in params]
        state.v = [np.zeros_like(param.data) for param in params]
    elif len(state.m) != len(params):
        raise ContractError('parameter list changed between Adam steps')

    state.t += 1
    correction1 = 1.0 - state.beta1 ** state.t
    correction2 = 1.0 - state.beta2 ** state.t
    for index, param in enumerate(params):
        grad = param.grad
        state.m[index] = state.beta1 * state.m[index] + (1.0 - state.beta1) * grad
        state.v[index] = state.beta2 * state.v[index] + (1.0 - state.beta2) * grad * grad
        m_hat = state.m[index] / correction1
        v_hat = state.v[index] / correction2
        updated = param.data - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
        if not np.all(np.isfinite(updated)):
            raise DivergenceError(f'Adam step {state.t} produced non-finite values in parameter {index}')
        param.data = updated.astype(param.data.dtype, copy=False)
        param.grad = None


# ==================== Early stopping ====================

@dataclass
class EarlyStopper:
    """Tracks the best validation loss; improvement must be strict."""

    patience: int = 30
    max_epochs: int = 250
    best_metric: float = float('inf')
    best_epoch: int = 0

    def update(self, epoch: int, val_loss: float) -> bool:
        if val_loss < self.best_metric:
            self.best_metric, self.best_epoch = val_loss, epoch
            return True
        return False

    def should_stop(self, epoch: int) -> bool:
        return epoch - self.best_epoch >= self.patience or epoch >= self.max_epochs


# ==================== Training ====================

@dataclass
class TrainingConfig:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 4
    patience: int = 30
    max_epochs: int = 250
    seed: int = 0

    def validate(self) -> None:
        if self.lr <= 0:
            raise ConfigError(f'learning rate must be positive, got {self.lr}')
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ConfigError('Adam betas must lie in [0, 1)')
        if self.batch_size < 1 or self.patience < 1 or self.max_epochs < 1:
            raise ConfigError('batch_size, patience and max_epochs must be positive')


@dataclass
class TrainingSet:
    """Images (n×c×h×w) and binary masks (n×1×h×w) held in memory."""

    images: np.ndarray
    masks: np.ndarray
    ids: List[str] = field(default_factory=list)

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=np.float32)
        self.masks = np.asarray(self.masks, dtype=np.float32)
        if self.images.ndim != 4 or self.masks.ndim != 4 or self.masks.shape[1] != 1:
            raise ShapeError(f'expected n×c×h×w images and n×1×h×w masks, got {self.images.shape}, {self.masks.shape}')
        if self.images.shape[0] != self.masks.shape[0] or self.images.shape[2:] != self.masks.shape[2:]:
            raise ShapeError('images and masks disagree in count or spatial size')
        if not self.ids:
            self.ids = [f'{index:04d}' for index in range(len(self))]

    def __len__(self):
        return self.images.shape[0]

    def batch(self, indices: Sequence[int]) -> Tuple[np.ndarray, np.ndarray]:
        return self.images[indices], self.masks[indices]


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float
    timestamp: str = ''


@dataclass
class TrainingLog:
    records: List[EpochRecord] = field(default_factory=list)

    def append(self, record: EpochRecord) -> None:
        self.records.append(record)

    def losses(self) -> List[Tuple[int, float, float]]:
        """(epoch, train_loss, val_loss) rows, without timestamps."""
        return [(r.epoch, r.train_loss, r.val_loss) for r in self.records]

    def write_jsonl(self, path: Union[str, Path]) -> None:
        lines = [json.dumps(asdict(record), sort_keys=True) for record in self.records]
        try:
            Path(path).write_text(''.join(line + '\n' for line in lines))
        except OSError as exc:
            raise IoError(f'cannot write training log {path}: {exc}') from exc

    @classmethod
    def read_jsonl(cls, path: Union[str, Path]) -> 'TrainingLog':
        try:
            lines = Path(path).read_text().splitlines()
        except OSError as exc:
            raise IoError(f'cannot read training log {path}: {exc}') from exc
        return cls([EpochRecord(**json.loads(line)) for line in lines if line.strip()])


@dataclass
class TrainedModel:
    net: object
    best_epoch: int
    best_val_loss: float


def evaluate_loss(model, dataset: TrainingSet, batch_size: int) -> float:
    """Mean BCE with dropout inactive and batch norm in eval mode."""
    total = 0.0
    for start in range(0, len(dataset), batch_size):
        indices = np.arange(start, min(start + batch_size, len(dataset)))
        images, masks = dataset.batch(indices)
        prob = model.forward(Tensor(images), DropoutMode.INACTIVE, BatchNormMode.EVAL)
        total += bce_loss(prob, masks).item() * len(indices)
    return total / len(dataset)


def train(model, train_set: TrainingSet, val_set: TrainingSet, config: TrainingConfig,
          on_epoch: Optional[Callable[[EpochRecord], None]] = None) -> Tuple[TrainedModel, TrainingLog]:
    """Fit ``model`` with Adam on shuffled mini-batches under early stopping.

    The returned model holds the weights of the epoch with the lowest
    validation loss.
    """
    config.validate()
    if len(train_set) == 0 or len(val_set) == 0:
        raise DataError('training and validation sets must be non-empty')

    shuffle_rng = np.random.default_rng([config.seed, 0])
    dropout_rng = np.random.default_rng([config.seed, 1])
    params = model.parameters()
    state = AdamState(lr=config.lr, beta1=config.beta1, beta2=config.beta2, eps=config.eps)
    stopper = EarlyStopper(patience=config.patience, max_epochs=config.max_epochs)
    best_state = model.state_dict()
    log = TrainingLog()

    for epoch in range(1, config.max_epochs + 1):
        order = shuffle_rng.permutation(len(train_set))
        total = 0.0
        for batch_index, start in enumerate(range(0, len(order), config.batch_size)):
            indices = order[start:start + config.batch_size]
            images, masks = train_set.batch(indices)
            with ComputationTape() as tape:
                prob = model.forward(Tensor(images), DropoutMode.ACTIVE, BatchNormMode.TRAIN, dropout_rng)
                loss = bce_loss(prob, masks)
            value = loss.item()
            if not np.isfinite(value):
                raise DivergenceError(f'non-finite training loss at epoch {epoch}, batch {batch_index}')
            backward(loss, tape)
            adam_step(state, params)
            total += value * len(indices)
            logger.debug('epoch %d batch %d loss=%.6f', epoch, batch_index, value)

        train_loss = total / len(train_set)
        val_loss = evaluate_loss(model, val_set, config.batch_size)
        if not np.isfinite(val_loss):
            raise DivergenceError(f'non-finite validation loss at epoch {epoch}')
        if stopper.update(epoch, val_loss):
            best_state = model.state_dict()

        record = EpochRecord(epoch, train_loss, val_loss, datetime.now(timezone.utc).isoformat())
        log.append(record)
        logger.info('epoch %d train_loss=%.6f val_loss=%.6f best_epoch=%d',
                    epoch, train_loss, val_loss, stopper.best_epoch)
        if on_epoch is not None:
            on_epoch(record)
        if stopper.should_stop(epoch):
            break

    model.load_state_dict(best_state)
    logger.info('training finished at epoch %d; restored epoch %d (val_loss=%.6f)',
                log.records[-1].epoch, stopper.best_epoch, stopper.best_metric)
    return TrainedModel(model, stopper.best_epoch, stopper.best_metric), log
