"""Parameter containers for the basic layers plus their initializers."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import tensor as T
from .params import BUFFER, POSITIVE, POSITIVE_BUFFER
from .tensor import ConvSpec, Tensor


@dataclass
class BatchNormParams:
    running_mean: Tensor = field(metadata=BUFFER)
    running_var: Tensor = field(metadata=POSITIVE_BUFFER)
    gamma: Tensor = field(metadata=POSITIVE)
    beta: Tensor
    eps: float = 1e-5

    @property
    def channels(self) -> int:
        return self.gamma.shape[0]

    def __call__(self, x: Tensor) -> Tensor:
        return T.batch_norm_infer(x, self.running_mean, self.running_var, self.gamma, self.beta, self.eps)


@dataclass
class GroupNormParams:
    groups: int
    gamma: Tensor = field(metadata=POSITIVE)
    beta: Tensor
    eps: float = 1e-5

    @property
    def channels(self) -> int:
        return self.gamma.shape[0]

    def __call__(self, x: Tensor) -> Tensor:
        return T.group_norm(x, self.groups, self.gamma, self.beta, self.eps)


@dataclass
class LinearParams:
    weight: Tensor
    bias: Optional[Tensor] = None

    @property
    def in_features(self) -> int:
        return self.weight.shape[1]

    @property
    def out_features(self) -> int:
        return self.weight.shape[0]

    def __call__(self, x: Tensor) -> Tensor:
        return T.linear(x, self.weight, self.bias)


def init_conv(
    rng: np.random.Generator,
    in_channels: int,
    out_channels: int,
    kernel: int,
    stride: int = 1,
    padding: Optional[int] = None,
    groups: int = 1,
    bias: bool = True,
) -> ConvSpec:
    """Uniform(+-1/sqrt(fan_in)) init; ``padding`` defaults to same-padding."""
    if padding is None:
        padding = kernel // 2
    fan_in = (in_channels // groups) * kernel * kernel
    bound = 1.0 / math.sqrt(fan_in)
    w = rng.uniform(-bound, bound, size=(out_channels, in_channels // groups, kernel, kernel))
    b = Tensor(rng.uniform(-bound, bound, size=out_channels)) if bias else None
    return ConvSpec(in_channels, out_channels, kernel, stride, padding, groups, Tensor(w), b)


def init_linear(rng: np.random.Generator, in_features: int, out_features: int, bias: bool = True) -> LinearParams:
    bound = 1.0 / math.sqrt(in_features)
    w = Tensor(rng.uniform(-bound, bound, size=(out_features, in_features)))
    b = Tensor(rng.uniform(-bound, bound, size=out_features)) if bias else None
    return LinearParams(w, b)


def init_batch_norm(channels: int, eps: float = 1e-5) -> BatchNormParams:
    return BatchNormParams(
        running_mean=Tensor(np.zeros(channels)),
        running_var=Tensor(np.ones(channels)),
        gamma=Tensor(np.ones(channels)),
        beta=Tensor(np.zeros(channels)),
        eps=eps,
    )


def init_group_norm(channels: int, groups: int, eps: float = 1e-5) -> GroupNormParams:
    return GroupNormParams(groups, Tensor(np.ones(channels)), Tensor(np.zeros(channels)), eps)
