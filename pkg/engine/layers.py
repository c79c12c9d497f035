"""Network layers: convolution, batch normalization, dropout, pooling, upsampling, loss."""
import logging
from typing import Dict, Iterator, Optional, Tuple

import numpy as np
from django.db import models

from .exceptions import ConfigError, ContractError, ShapeError
from .tensor import Function, Tensor, as_tensor, sigmoid  # noqa: F401  (sigmoid re-exported)

logger = logging.getLogger(__name__)

ALLOWED_KERNELS = (2, 3, 5)
BN_EPSILON = 1e-5
BN_MOMENTUM = 0.1
BCE_EPSILON = 1e-7


class DropoutMode(models.TextChoices):
    ACTIVE = 'active'
    INACTIVE = 'inactive'


class BatchNormMode(models.TextChoices):
    TRAIN = 'train'
    EVAL = 'eval'


# ==================== Module ====================

class Module:
    """Container of named parameters, buffers and child modules."""

    def __init__(self):
        self._parameters: Dict[str, Tensor] = {}
        self._buffers: Dict[str, np.ndarray] = {}
        self._modules: Dict[str, 'Module'] = {}

    def register_parameter(self, name: str, tensor: Tensor) -> Tensor:
        tensor.requires_grad = True
        self._parameters[name] = tensor
        return tensor

    def register_buffer(self, name: str, array: np.ndarray) -> None:
        self._buffers[name] = np.asarray(array, dtype=np.float32)

    def add_module(self, name: str, module: 'Module') -> 'Module':
        self._modules[name] = module
        return module

    def named_parameters(self, prefix: str = '') -> Iterator[Tuple[str, Tensor]]:
        for name, tensor in self._parameters.items():
            yield prefix + name, tensor
        for child_name, child in self._modules.items():
            yield from child.named_parameters(f'{prefix}{child_name}.')

    def parameters(self) -> list:
        return [tensor for _, tensor in self.named_parameters()]

    def named_state(self, prefix: str = '') -> Iterator[Tuple[str, np.ndarray]]:
        """Parameters and buffers in a fixed walk order."""
        for name, tensor in self._parameters.items():
            yield prefix + name, tensor.data
        for name, array in self._buffers.items():
            yield prefix + name, array
        for child_name, child in self._modules.items():
            yield from child.named_state(f'{prefix}{child_name}.')

    def state_dict(self) -> Dict[str, np.ndarray]:
        return {name: array.copy() for name, array in self.named_state()}

    def load_state_dict(self, state: Dict[str, np.ndarray]) -> None:
        expected = dict(self.named_state())
        if set(expected) != set(state):
            missing = sorted(set(expected) - set(state))
            unexpected = sorted(set(state) - set(expected))
            raise ContractError(f'state mismatch: missing {missing}, unexpected {unexpected}')
        for name, array in state.items():
            if tuple(np.shape(array)) != expected[name].shape:
                raise ContractError(f'{name}: shape {np.shape(array)} != {expected[name].shape}')
        self._assign_state(state, '')

    def _assign_state(self, state: Dict[str, np.ndarray], prefix: str) -> None:
        for name, tensor in self._parameters.items():
            tensor.data = np.array(state[prefix + name], dtype=np.float32)
            tensor.grad = None
        for name in self._buffers:
            self._buffers[name] = np.array(state[prefix + name], dtype=np.float32)
        for child_name, child in self._modules.items():
            child._assign_state(state, f'{prefix}{child_name}.')

    def parameter_count(self) -> int:
        return sum(tensor.size for tensor in self.parameters())

    def zero_grad(self) -> None:
        for tensor in self.parameters():
            tensor.zero_grad()


# ==================== Convolution ====================

def same_padding(kernel: int) -> Tuple[int, int]:
    before = (kernel - 1) // 2
    return before, kernel - 1 - before


class Conv2dFunction(Function):
    """Stride-1 same-padded cross-correlation, accumulated one kernel offset at a time."""

    def forward(self, x, weight, bias):
        if x.ndim != 4:
            raise ShapeError(f'conv2d expects b×c×h×w input, got shape {x.shape}')
        batch, channels, height, width = x.shape
        out_channels, in_channels, kh, kw = weight.shape
        if channels != in_channels:
            raise ShapeError(f'conv2d expects {in_channels} input channels, got {channels}')
        top, bottom = same_padding(kh)
        left, right = same_padding(kw)
        padded = np.pad(x, ((0, 0), (0, 0), (top, bottom), (left, right)))
        self.padded, self.weight, self.offsets = padded, weight, (top, left)

        out = np.zeros((out_channels, batch, height, width), dtype=x.dtype)
        for i in range(kh):
            for j in range(kw):
                window = padded[:, :, i:i + height, j:j + width]
                out += np.tensordot(weight[:, :, i, j], window, axes=([1], [1]))
        out += bias[:, None, None, None]
        return out.transpose(1, 0, 2, 3)

    def backward(self, grad):
        batch, _, height, width = grad.shape
        _, _, kh, kw = self.weight.shape
        top, left = self.offsets
        grad_by_channel = grad.transpose(1, 0, 2, 3)
        d_padded = np.zeros_like(self.padded)
        d_weight = np.zeros_like(self.weight)
        for i in range(kh):
            for j in range(kw):
                window = self.padded[:, :, i:i + height, j:j + width]
                d_weight[:, :, i, j] = np.tensordot(grad_by_channel, window, axes=([1, 2, 3], [0, 2, 3]))
                d_padded[:, :, i:i + height, j:j + width] += np.tensordot(
                    self.weight[:, :, i, j], grad_by_channel, axes=([0], [0])
                ).transpose(1, 0, 2, 3)
        d_x = d_padded[:, :, top:top + height, left:left + width]
        d_bias = grad.sum(axis=(0, 2, 3))
        return d_x, d_weight, d_bias


class Conv2d(Module):
    """Same-padded stride-1 convolution with He-initialized weights and zero bias."""

    def __init__(self, in_channels: int, out_channels: int, kernel_size: int, rng: np.random.Generator):
        super().__init__()
        if kernel_size not in ALLOWED_KERNELS:
            raise ConfigError(f'kernel size must be one of {ALLOWED_KERNELS}, got {kernel_size}')
        if in_channels < 1 or out_channels < 1:
            raise ConfigError('channel counts must be positive')
        self.in_channels, self.out_channels, self.kernel_size = in_channels, out_channels, kernel_size
        fan_in = in_channels * kernel_size * kernel_size
        weight = rng.standard_normal((out_channels, in_channels, kernel_size, kernel_size)) * np.sqrt(2.0 / fan_in)
        self.weight = self.register_parameter('weight', Tensor(weight))
        self.bias = self.register_parameter('bias', Tensor(np.zeros(out_channels)))

    def forward(self, x: Tensor) -> Tensor:
        return conv2d_forward(self, x)


def conv2d_forward(layer: Conv2d, x: Tensor) -> Tensor:
    return Conv2dFunction.apply(x, layer.weight, layer.bias)


# ==================== Batch normalization ====================

def _per_channel(array: np.ndarray) -> np.ndarray:
    return array[None, :, None, None]


class BatchNormTrainFunction(Function):
    def forward(self, x, gamma, beta):
        eps = self.options['eps']
        axes = (0, 2, 3)
        self.count = x.size // x.shape[1]
        mean = x.mean(axis=axes, keepdims=True)
        var = x.var(axis=axes, keepdims=True)
        self.inv_std = 1.0 / np.sqrt(var + eps)
        self.normalized = (x - mean) * self.inv_std
        self.gamma = gamma
        return _per_channel(gamma) * self.normalized + _per_channel(beta)

    def backward(self, grad):
        axes = (0, 2, 3)
        d_gamma = (grad * self.normalized).sum(axis=axes)
        d_beta = grad.sum(axis=axes)
        d_normalized = grad * _per_channel(self.gamma)
        d_x = (self.inv_std / self.count) * (
            self.count * d_normalized
            - d_normalized.sum(axis=axes, keepdims=True)
            - self.normalized * (d_normalized * self.normalized).sum(axis=axes, keepdims=True)
        )
        return d_x, d_gamma, d_beta


class BatchNormEvalFunction(Function):
    def forward(self, x, gamma, beta):
        mean = _per_channel(self.options['running_mean'])
        self.inv_std = 1.0 / np.sqrt(_per_channel(self.options['running_var']) + self.options['eps'])
        self.normalized = (x - mean) * self.inv_std
        self.gamma = gamma
        return _per_channel(gamma) * self.normalized + _per_channel(beta)

    def backward(self, grad):
        axes = (0, 2, 3)
        d_x = grad * _per_channel(self.gamma) * self.inv_std
        return d_x, (grad * self.normalized).sum(axis=axes), grad.sum(axis=axes)


class BatchNorm2d(Module):
    def __init__(self, channels: int, momentum: float = BN_MOMENTUM, eps: float = BN_EPSILON):
        super().__init__()
        if not 0.0 < momentum < 1.0:
            raise ConfigError(f'batch-norm momentum must lie in (0, 1), got {momentum}')
        self.channels, self.momentum, self.eps = channels, momentum, eps
        self.gamma = self.register_parameter('gamma', Tensor(np.ones(channels)))
        self.beta = self.register_parameter('beta', Tensor(np.zeros(channels)))
        self.register_buffer('running_mean', np.zeros(channels))
        self.register_buffer('running_var', np.ones(channels))

    @property
    def running_mean(self) -> np.ndarray:
        return self._buffers['running_mean']

    @property
    def running_var(self) -> np.ndarray:
        return self._buffers['running_var']

    def forward(self, x: Tensor, mode: str = BatchNormMode.EVAL) -> Tensor:
        return batchnorm_forward(self, x, mode)


def batchnorm_forward(layer: BatchNorm2d, x: Tensor, mode: str = BatchNormMode.EVAL) -> Tensor:
    """Normalize per channel; train mode also folds batch statistics into the running ones."""
    if x.ndim != 4 or x.shape[1] != layer.channels:
        raise ShapeError(f'batch norm expects b×{layer.channels}×h×w input, got shape {x.shape}')
    if BatchNormMode(mode) == BatchNormMode.EVAL:
        return BatchNormEvalFunction.apply(
            x, layer.gamma, layer.beta,
            running_mean=layer.running_mean, running_var=layer.running_var, eps=layer.eps,
        )

    count = x.size // x.shape[1]
    if count < 2:
        raise ContractError('batch norm in train mode needs at least 2 values per channel')
    out = BatchNormTrainFunction.apply(x, layer.gamma, layer.beta, eps=layer.eps)
    batch_mean = x.data.mean(axis=(0, 2, 3))
    unbiased_var = x.data.var(axis=(0, 2, 3)) * count / (count - 1)
    momentum = layer.momentum
    layer._buffers['running_mean'] = ((1 - momentum) * layer.running_mean + momentum * batch_mean).astype(np.float32)
    layer._buffers['running_var'] = ((1 - momentum) * layer.running_var + momentum * unbiased_var).astype(np.float32)
    return out


# ==================== Dropout ====================

class Dropout(Module):
    """Inverted dropout on activations: keep with probability 1−θ, scale by 1/(1−θ)."""

    def __init__(self, rate: float):
        super().__init__()
        if not 0.0 <= rate < 1.0:
            raise ConfigError(f'dropout rate must lie in [0, 1), got {rate}')
        self.rate = rate

    def forward(self, x: Tensor, mode: str = DropoutMode.INACTIVE,
                rng: Optional[np.random.Generator] = None) -> Tensor:
        return dropout_forward(self, x, mode, rng)


def dropout_forward(layer: Dropout, x: Tensor, mode: str = DropoutMode.INACTIVE,
                    rng: Optional[np.random.Generator] = None) -> Tensor:
    if DropoutMode(mode) == DropoutMode.INACTIVE or layer.rate == 0.0:
        return x
    if rng is None:
        raise ContractError('active dropout needs a random generator')
    keep = rng.random(x.shape) >= layer.rate
    scale = keep.astype(x.data.dtype) / np.asarray(1.0 - layer.rate, dtype=x.data.dtype)
    return x * Tensor(scale)


# ==================== Pooling and upsampling ====================

class MaxPool2x2Function(Function):
    def forward(self, x):
        batch, channels, height, width = x.shape
        if height % 2 or width % 2:
            raise ShapeError(f'2×2 max-pool needs even spatial dims, got {height}×{width}')
        windows = (x.reshape(batch, channels, height // 2, 2, width // 2, 2)
                   .transpose(0, 1, 2, 4, 3, 5)
                   .reshape(batch, channels, height // 2, width // 2, 4))
        self.argmax = windows.argmax(axis=-1)[..., None]
        self.input_shape = x.shape
        return np.take_along_axis(windows, self.argmax, axis=-1)[..., 0]

    def backward(self, grad):
        batch, channels, height, width = self.input_shape
        routed = np.zeros(grad.shape + (4,), dtype=grad.dtype)
        np.put_along_axis(routed, self.argmax, grad[..., None], axis=-1)
        d_x = (routed.reshape(batch, channels, height // 2, width // 2, 2, 2)
               .transpose(0, 1, 2, 4, 3, 5)
               .reshape(self.input_shape))
        return (d_x,)


class Upsample2xFunction(Function):
    def forward(self, x):
        return x.repeat(2, axis=2).repeat(2, axis=3)

    def backward(self, grad):
        batch, channels, height, width = grad.shape
        return (grad.reshape(batch, channels, height // 2, 2, width // 2, 2).sum(axis=(3, 5)),)


def maxpool2x2(x: Tensor) -> Tensor:
    if x.ndim != 4:
        raise ShapeError(f'max-pool expects b×c×h×w input, got shape {x.shape}')
    return MaxPool2x2Function.apply(x)


def upsample2x_nearest(x: Tensor) -> Tensor:
    if x.ndim != 4:
        raise ShapeError(f'upsample expects b×c×h×w input, got shape {x.shape}')
    return Upsample2xFunction.apply(x)


# ==================== Loss ====================

class BinaryCrossEntropyFunction(Function):
    """Mean BCE on clamped probabilities; the clamp passes gradients straight through."""

    def forward(self, p, y):
        eps = self.options['eps']
        self.clamped = np.clip(p, eps, 1.0 - eps)
        self.target = y
        losses = y * np.log(self.clamped) + (1.0 - y) * np.log(1.0 - self.clamped)
        return np.asarray(-losses.mean(), dtype=p.dtype)

    def backward(self, grad):
        p, y = self.clamped, self.target
        d_p = grad * (-(y / p) + (1.0 - y) / (1.0 - p)) / p.size
        return d_p, None


def bce_loss(p: Tensor, y, eps: float = BCE_EPSILON) -> Tensor:
    y = as_tensor(y)
    if p.shape != y.shape:
        raise ShapeError(f'prediction shape {p.shape} != target shape {y.shape}')
    if not np.all((y.data == 0) | (y.data == 1)):
        raise ContractError('binary cross-entropy targets must be 0 or 1')
    return BinaryCrossEntropyFunction.apply(p, y, eps=eps)
