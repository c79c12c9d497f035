"""The Bayesian U-Net: encoder/decoder with skip connections and block-level dropout.

Each encoder block is two conv→ReLU→BN units followed by dropout; all but the
deepest block (the bottleneck) then max-pool. Each decoder block upsamples,
concatenates the matching encoder output and runs two conv→ReLU→BN units,
followed by dropout except in the outermost decoder block. A final small
convolution maps to one channel and a sigmoid gives per-pixel foreground
probability.
"""
import logging
from dataclasses import asdict, dataclass, replace
from typing import List, Optional

import numpy as np

from .exceptions import ConfigError, ShapeError
from .layers import (
    ALLOWED_KERNELS, BatchNorm2d, BatchNormMode, Conv2d, Dropout, DropoutMode, Module,
    maxpool2x2, upsample2x_nearest,
)
from .tensor import Tensor, concat, relu, sigmoid

logger = logging.getLogger(__name__)

FIRST_CONV = 'encoder.0.unit0.conv.weight'


@dataclass(frozen=True)
class UNetSpec:
    in_channels: int = 1
    base_filters: int = 32
    levels: int = 5
    kernel: int = 5
    dropout_rate: float = 0.5
    final_kernel: int = 3
    out_channels: int = 1

    def filters(self) -> List[int]:
        return [self.base_filters * 2 ** level for level in range(self.levels)]

    @property
    def divisor(self) -> int:
        return 2 ** (self.levels - 1)

    def validate(self) -> None:
        if self.in_channels not in (1, 2):
            raise ConfigError(f'in_channels must be 1 or 2, got {self.in_channels}')
        if self.out_channels != 1:
            raise ConfigError('only a single output channel is supported')
        if self.base_filters < 1:
            raise ConfigError(f'base_filters must be positive, got {self.base_filters}')
        if self.levels < 2:
            raise ConfigError(f'a U-Net needs at least 2 levels, got {self.levels}')
        for name in ('kernel', 'final_kernel'):
            if getattr(self, name) not in ALLOWED_KERNELS:
                raise ConfigError(f'{name} must be one of {ALLOWED_KERNELS}')
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigError(f'dropout rate must lie in [0, 1), got {self.dropout_rate}')

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> 'UNetSpec':
        try:
            return cls(**data)
        except TypeError as exc:
            raise ConfigError(f'invalid network spec: {exc}') from exc


def expected_dropout_count(spec: UNetSpec) -> int:
    # every encoder block including the bottleneck, every decoder block but the outermost
    return spec.levels + (spec.levels - 1) - 1


class ConvUnit(Module):
    def __init__(self, in_channels: int, out_channels: int, kernel: int, rng: np.random.Generator):
        super().__init__()
        self.conv = self.add_module('conv', Conv2d(in_channels, out_channels, kernel, rng))
        self.norm = self.add_module('norm', BatchNorm2d(out_channels))

    def forward(self, x: Tensor, bn_mode: str) -> Tensor:
        return self.norm.forward(relu(self.conv.forward(x)), bn_mode)


class ConvBlock(Module):
    """Two conv units and an optional dropout layer."""

    def __init__(self, in_channels: int, out_channels: int, kernel: int,
                 dropout_rate: Optional[float], rng: np.random.Generator):
        super().__init__()
        self.units = [
            self.add_module('unit0', ConvUnit(in_channels, out_channels, kernel, rng)),
            self.add_module('unit1', ConvUnit(out_channels, out_channels, kernel, rng)),
        ]
        self.dropout = Dropout(dropout_rate) if dropout_rate is not None else None

    def forward(self, x: Tensor, dropout_mode: str, bn_mode: str,
                rng: Optional[np.random.Generator]) -> Tensor:
        for unit in self.units:
            x = unit.forward(x, bn_mode)
        if self.dropout is not None:
            x = self.dropout.forward(x, dropout_mode, rng)
        return x


class UNet(Module):
    def __init__(self, spec: UNetSpec, seed: int = 0):
        super().__init__()
        spec.validate()
        self.spec = spec
        rng = np.random.default_rng(seed)
        filters = spec.filters()

        self.encoder: List[ConvBlock] = []
        for level, width in enumerate(filters):
            in_channels = spec.in_channels if level == 0 else filters[level - 1]
            block = ConvBlock(in_channels, width, spec.kernel, spec.dropout_rate, rng)
            self.encoder.append(self.add_module(f'encoder.{level}', block))

        self.decoder: List[ConvBlock] = []
        for position, level in enumerate(reversed(range(spec.levels - 1))):
            rate = spec.dropout_rate if level > 0 else None
            block = ConvBlock(filters[level + 1] + filters[level], filters[level], spec.kernel, rate, rng)
            self.decoder.append(self.add_module(f'decoder.{position}', block))

        self.head = self.add_module('head', Conv2d(filters[0], spec.out_channels, spec.final_kernel, rng))

    @property
    def dropout_count(self) -> int:
        return sum(block.dropout is not None for block in self.encoder + self.decoder)

    def check_input(self, x: Tensor) -> None:
        if x.ndim != 4 or x.shape[1] != self.spec.in_channels:
            raise ShapeError(f'expected b×{self.spec.in_channels}×h×w input, got shape {x.shape}')
        height, width = x.shape[2:]
        divisor = self.spec.divisor
        if height % divisor or width % divisor:
            raise ShapeError(f'spatial dims {height}×{width} must be divisible by {divisor}')

    def forward(self, x: Tensor, dropout_mode: str = DropoutMode.INACTIVE,
                bn_mode: str = BatchNormMode.EVAL, rng: Optional[np.random.Generator] = None) -> Tensor:
        self.check_input(x)
        skips = []
        h = x
        for level, block in enumerate(self.encoder):
            h = block.forward(h, dropout_mode, bn_mode, rng)
            if level < self.spec.levels - 1:
                skips.append(h)
                h = maxpool2x2(h)
        for block in self.decoder:
            h = concat([upsample2x_nearest(h), skips.pop()], axis=1)
            h = block.forward(h, dropout_mode, bn_mode, rng)
        return sigmoid(self.head.forward(h))


def build(spec: UNetSpec, seed: int = 0) -> UNet:
    net = UNet(spec, seed)
    logger.debug('built U-Net %s with %d parameters and %d dropout layers',
                 spec, net.parameter_count(), net.dropout_count)
    return net


def widen_input(net: UNet, in_channels: int, seed: int) -> UNet:
    """Copy ``net`` into a network with more input channels.

    Kernels for the existing channels are copied; kernels for the new channels
    keep their fresh He initialization.
    """
    wider = build(replace(net.spec, in_channels=in_channels), seed)
    state = net.state_dict()
    fresh = wider.state_dict()[FIRST_CONV]
    fresh[:, :net.spec.in_channels] = state[FIRST_CONV]
    state[FIRST_CONV] = fresh
    wider.load_state_dict(state)
    return wider

