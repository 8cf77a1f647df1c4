"""Global centralized regulation over a five-level feature pyramid.

The EVC runs once on the deepest level; its output is upsampled to every
regulated shallower level, concatenated with a lateral 1x1 projection of
that level and fused back to the common width by another 1x1 conv.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import tensor as T
from .evc import EvcConfig, EvcParams, evc_forward, init_evc_params
from .layers import init_conv
from .tensor import ConvSpec, ShapeError, Tensor

NUM_LEVELS = 5


class PyramidError(ShapeError):
    """Missing level or inconsistent level geometry."""


def level_stride(level: int) -> int:
    """Downsampling factor of level ``i`` relative to the input image."""
    return 2 ** (level + 1)


@dataclass
class Pyramid:
    """Feature maps keyed by level index ``0..4`` (stride ``2**(i+1)``)."""

    levels: dict

    def __post_init__(self):
        levels = {}
        for i, t in self.levels.items():
            i = int(i)
            if not 0 <= i < NUM_LEVELS:
                raise PyramidError(f"level index {i} outside 0..{NUM_LEVELS - 1}")
            if t.ndim != 4:
                raise PyramidError(f"level {i} must be [B, C, H, W], got {t.shape}")
            levels[i] = t
        if not levels:
            raise PyramidError("pyramid has no levels")
        self.levels = dict(sorted(levels.items()))
        idx = list(self.levels)
        batch = self.levels[idx[0]].shape[0]
        for i in idx:
            if self.levels[i].shape[0] != batch:
                raise PyramidError("all levels must share the batch size")
        for a, b in zip(idx, idx[1:]):
            if b == a + 1:
                Ha, Wa = self.levels[a].shape[2:]
                Hb, Wb = self.levels[b].shape[2:]
                if (Ha, Wa) != (2 * Hb, 2 * Wb):
                    raise PyramidError(
                        f"level {a} is {Ha}x{Wa} but level {b} is {Hb}x{Wb}; adjacent levels differ by 2x"
                    )

    @classmethod
    def from_list(cls, maps, deepest: int = NUM_LEVELS - 1) -> "Pyramid":
        """Assign ``maps`` (shallow to deep) to consecutive levels ending at ``deepest``."""
        first = deepest - len(maps) + 1
        if first < 0:
            raise PyramidError(f"{len(maps)} maps do not fit below level {deepest}")
        return cls({first + k: m for k, m in enumerate(maps)})

    def __getitem__(self, level: int) -> Tensor:
        try:
            return self.levels[level]
        except KeyError:
            raise PyramidError(f"pyramid has no level {level}") from None

    def __contains__(self, level: int) -> bool:
        return level in self.levels

    def __len__(self) -> int:
        return len(self.levels)

    @property
    def deepest(self) -> int:
        return max(self.levels)

    @property
    def strides(self) -> dict:
        return {i: level_stride(i) for i in self.levels}

    def shapes(self) -> dict:
        return {i: t.shape for i, t in self.levels.items()}

    def to_list(self) -> list:
        return list(self.levels.values())


@dataclass
class GcrConfig:
    regulated_levels: tuple = (3, 2)
    repeat: int = 1
    chained: bool = False
    evc_level: int = NUM_LEVELS - 1

    def __post_init__(self):
        self.regulated_levels = tuple(int(i) for i in self.regulated_levels)
        if self.repeat < 1:
            raise ValueError(f"repeat must be >= 1, got {self.repeat}")
        if len(set(self.regulated_levels)) != len(self.regulated_levels):
            raise ValueError(f"duplicate regulated levels {self.regulated_levels}")
        for i in self.regulated_levels:
            if not 0 <= i < self.evc_level:
                raise ValueError(f"regulated level {i} must be shallower than the EVC level {self.evc_level}")

    @property
    def top_down(self) -> tuple:
        return tuple(sorted(self.regulated_levels, reverse=True))


@dataclass
class CfpParams:
    """EVC parameters plus per-level lateral and fusion projections."""

    evc: EvcParams
    lateral: dict = field(default_factory=dict)
    fuse: dict = field(default_factory=dict)

    @property
    def channels(self) -> int:
        return self.evc.channels


def init_cfp_params(
    level_channels: dict,
    evc_cfg: Optional[EvcConfig] = None,
    gcr_cfg: Optional[GcrConfig] = None,
    rng=None,
) -> CfpParams:
    """``level_channels`` maps level index to input channel count."""
    evc_cfg = evc_cfg or EvcConfig()
    gcr_cfg = gcr_cfg or GcrConfig()
    rng = np.random.default_rng(rng)
    if gcr_cfg.evc_level not in level_channels:
        raise PyramidError(f"no channel count given for EVC level {gcr_cfg.evc_level}")
    C = evc_cfg.channels
    evc = init_evc_params(level_channels[gcr_cfg.evc_level], evc_cfg, rng)
    lateral, fuse = {}, {}
    for i in gcr_cfg.top_down:
        if i not in level_channels:
            raise PyramidError(f"no channel count given for regulated level {i}")
        lateral[i] = init_conv(rng, level_channels[i], C, 1)
        fuse[i] = init_conv(rng, 2 * C, C, 1)
    return CfpParams(evc, lateral, fuse)


def upsample_to(x: Tensor, size: tuple) -> Tensor:
    """Nearest-upsample by repeated 2x steps until spatial size equals ``size``."""
    H, W = x.shape[2:]
    th, tw = size
    if th % H or tw % W or th // H != tw // W:
        raise PyramidError(f"cannot upsample {H}x{W} to {th}x{tw} by a uniform factor")
    factor = th // H
    steps = factor.bit_length() - 1
    if factor < 2 or (1 << steps) != factor:
        raise PyramidError(f"spatial ratio {factor} is not a power of two >= 2")
    for _ in range(steps):
        x = T.upsample_nearest2x(x)
    return x


def gcr_fusion_input(shallow: Tensor, deep_reg: Tensor, lateral: ConvSpec) -> Tensor:
    """``[lateral(shallow), upsampled deep]`` before the fusing projection."""
    lat = T.conv2d(shallow, lateral)
    return T.concat_channels([lat, upsample_to(deep_reg, shallow.shape[2:])])


def gcr_regulate_level(shallow: Tensor, deep_reg: Tensor, lateral: ConvSpec, fuse: ConvSpec) -> Tensor:
    return T.conv2d(gcr_fusion_input(shallow, deep_reg, lateral), fuse)


def _check_inputs(pyr: Pyramid, params: CfpParams, cfg: GcrConfig) -> None:
    if cfg.evc_level not in pyr:
        raise PyramidError(f"EVC level {cfg.evc_level} missing from pyramid")
    for i in cfg.regulated_levels:
        if i not in pyr:
            raise PyramidError(f"regulated level {i} missing from pyramid")
        if i not in params.lateral or i not in params.fuse:
            raise PyramidError(f"no projection parameters for level {i}")


def _single_pass(pyr: Pyramid, params: CfpParams, cfg: GcrConfig, training: bool, rng) -> Pyramid:
    reg = evc_forward(pyr[cfg.evc_level], params.evc, training, rng)
    out = dict(pyr.levels)
    out[cfg.evc_level] = reg
    deep = reg
    for i in cfg.top_down:
        source = deep if cfg.chained else reg
        out[i] = gcr_regulate_level(pyr[i], source, params.lateral[i], params.fuse[i])
        if cfg.chained:
            deep = out[i]
    return Pyramid(out)


def cfp_forward(
    pyr: Pyramid,
    params: CfpParams,
    cfg: Optional[GcrConfig] = None,
    training: bool = False,
    rng=None,
) -> Pyramid:
    """Regulate ``pyr`` ``cfg.repeat`` times with one shared parameter set.

    Unregulated levels other than the EVC level are passed through as the
    very same tensors.
    """
    cfg = cfg or GcrConfig()
    _check_inputs(pyr, params, cfg)
    if cfg.repeat > 1:
        C = params.channels
        touched = (cfg.evc_level,) + cfg.regulated_levels
        bad = {i: pyr[i].shape[1] for i in touched if pyr[i].shape[1] != C}
        if bad:
            raise PyramidError(
                f"repeat={cfg.repeat} feeds outputs back as inputs, so levels {sorted(bad)} need {C} channels, got {bad}"
            )
    for _ in range(cfg.repeat):
        pyr = _single_pass(pyr, params, cfg, training, rng)
    return pyr
