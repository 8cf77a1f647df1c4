"""Explicit visual center: stem, lightweight MLP branch and learnable visual center branch.

Both branches read the same stem output ``x_in``; their outputs are
concatenated along channels and projected back to the stem width by a
1x1 convolution.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import tensor as T
from .layers import (
    BatchNormParams,
    GroupNormParams,
    LinearParams,
    init_batch_norm,
    init_conv,
    init_group_norm,
    init_linear,
)
from .params import POSITIVE
from .tensor import ConvSpec, ShapeError, Tensor


@dataclass
class EvcConfig:
    """Structural hyper-parameters of one EVC block."""

    channels: int = 256
    expansion: int = 4
    dconv_kernel: int = 1
    groupnorm_groups: int = 32
    codewords: int = 64
    droppath: float = 0.0
    droppath_rescale: bool = False
    layer_scale_init: float = 1e-6
    eps: float = 1e-5

    def __post_init__(self):
        if self.channels < 1 or self.expansion < 1 or self.codewords < 1:
            raise ValueError("channels, expansion and codewords must be positive")
        if self.dconv_kernel < 1 or self.dconv_kernel % 2 == 0:
            raise ValueError(f"dconv_kernel must be a positive odd size, got {self.dconv_kernel}")
        if not 0.0 <= self.droppath < 1.0:
            raise ValueError(f"droppath must be in [0, 1), got {self.droppath}")
        if self.eps <= 0:
            raise ValueError("eps must be positive")

    @property
    def effective_groups(self) -> int:
        g = min(self.groupnorm_groups, self.channels)
        if g < 1 or self.channels % g:
            raise ValueError(f"group norm: {self.channels} channels not divisible by {g} groups")
        return g


@dataclass
class ConvBnAct:
    """``act(bn(conv(x)))``."""

    conv: ConvSpec
    bn: BatchNormParams
    act: str = "relu"

    def __call__(self, x: Tensor) -> Tensor:
        return T.activation(self.bn(T.conv2d(x, self.conv)), self.act)


StemParams = ConvBnAct


@dataclass
class MlpBlockParams:
    gn1: GroupNormParams
    dconv: ConvSpec
    scale1: Tensor
    gn2: GroupNormParams
    fc1: LinearParams
    fc2: LinearParams
    scale2: Tensor
    droppath1: float = 0.0
    droppath2: float = 0.0
    droppath_rescale: bool = False
    act: str = "silu"

    def __post_init__(self):
        if not self.dconv.depthwise:
            raise ShapeError("mlp dconv must be depthwise")
        for rate in (self.droppath1, self.droppath2):
            if not 0.0 <= rate < 1.0:
                raise ValueError(f"droppath rate must be in [0, 1), got {rate}")


@dataclass
class Codebook:
    """``K`` codewords of dimension ``C`` and one smoothing factor per codeword."""

    codewords: Tensor
    smoothing: Tensor = field(metadata=POSITIVE)

    def __post_init__(self):
        if self.codewords.ndim != 2:
            raise ShapeError(f"codewords must be [K, C], got {self.codewords.shape}")
        if self.smoothing.shape != (self.codewords.shape[0],):
            raise ShapeError("need exactly one smoothing factor per codeword")

    @property
    def size(self) -> int:
        return self.codewords.shape[0]

    @property
    def dim(self) -> int:
        return self.codewords.shape[1]


@dataclass
class LvcParams:
    conv_block: list
    cbr: ConvBnAct
    codebook: Codebook
    phi_bn: BatchNormParams
    fc: LinearParams
    proj: ConvSpec


@dataclass
class EvcParams:
    stem: StemParams
    mlp: MlpBlockParams
    lvc: LvcParams
    fuse_proj: ConvSpec

    @property
    def in_channels(self) -> int:
        return self.stem.conv.in_channels

    @property
    def channels(self) -> int:
        return self.stem.conv.out_channels


# ------------------------------------------------------------------- init


def init_stem(rng, in_channels: int, cfg: EvcConfig) -> StemParams:
    return ConvBnAct(init_conv(rng, in_channels, cfg.channels, 7, padding=3), init_batch_norm(cfg.channels, cfg.eps))


def init_mlp_block(rng, cfg: EvcConfig) -> MlpBlockParams:
    C, g = cfg.channels, cfg.effective_groups
    hidden = C * cfg.expansion
    return MlpBlockParams(
        gn1=init_group_norm(C, g, cfg.eps),
        dconv=init_conv(rng, C, C, cfg.dconv_kernel, groups=C),
        scale1=Tensor(np.full(C, cfg.layer_scale_init)),
        gn2=init_group_norm(C, g, cfg.eps),
        fc1=init_linear(rng, C, hidden),
        fc2=init_linear(rng, hidden, C),
        scale2=Tensor(np.full(C, cfg.layer_scale_init)),
        droppath1=cfg.droppath,
        droppath2=cfg.droppath,
        droppath_rescale=cfg.droppath_rescale,
    )


def init_codebook(rng, codewords: int, dim: int) -> Codebook:
    bound = 1.0 / math.sqrt(dim)
    return Codebook(Tensor(rng.uniform(-bound, bound, size=(codewords, dim))), Tensor(np.ones(codewords)))


def init_lvc(rng, cfg: EvcConfig) -> LvcParams:
    C = cfg.channels
    block = [
        ConvBnAct(init_conv(rng, C, C, k), init_batch_norm(C, cfg.eps)) for k in (1, 3, 1)
    ]
    return LvcParams(
        conv_block=block,
        cbr=ConvBnAct(init_conv(rng, C, C, 3), init_batch_norm(C, cfg.eps)),
        codebook=init_codebook(rng, cfg.codewords, C),
        phi_bn=init_batch_norm(cfg.codewords, cfg.eps),
        fc=init_linear(rng, C, C),
        proj=init_conv(rng, C, C, 1),
    )


def init_evc_params(in_channels: int, cfg: Optional[EvcConfig] = None, rng=None) -> EvcParams:
    """Fresh EVC parameters; ``rng`` is a seed or ``numpy.random.Generator``."""
    cfg = cfg or EvcConfig()
    rng = np.random.default_rng(rng)
    return EvcParams(
        stem=init_stem(rng, in_channels, cfg),
        mlp=init_mlp_block(rng, cfg),
        lvc=init_lvc(rng, cfg),
        fuse_proj=init_conv(rng, 2 * cfg.channels, cfg.channels, 1),
    )


# ---------------------------------------------------------------- forward


def stem_forward(x4: Tensor, p: StemParams) -> Tensor:
    return p(x4)


def dconv_block_forward(x_in: Tensor, p: MlpBlockParams, training: bool = False, rng=None) -> Tensor:
    branch = T.channel_broadcast_mul(T.depthwise_conv2d(p.gn1(x_in), p.dconv), p.scale1)
    branch = T.droppath(branch, p.droppath1, rng, training, p.droppath_rescale)
    return T.add(branch, x_in)


def channel_mlp(x: Tensor, p: MlpBlockParams) -> Tensor:
    """Two dense layers over channels, applied independently at every pixel."""
    h = T.permute(x, (0, 2, 3, 1))
    h = p.fc2(T.activation(p.fc1(h), p.act))
    return T.permute(h, (0, 3, 1, 2))


def channel_mlp_block_forward(x: Tensor, p: MlpBlockParams, training: bool = False, rng=None) -> Tensor:
    branch = T.channel_broadcast_mul(channel_mlp(p.gn2(x), p), p.scale2)
    branch = T.droppath(branch, p.droppath2, rng, training, p.droppath_rescale)
    return T.add(branch, x)


def lightweight_mlp_forward(x_in: Tensor, p: MlpBlockParams, training: bool = False, rng=None) -> Tensor:
    return channel_mlp_block_forward(dconv_block_forward(x_in, p, training, rng), p, training, rng)


def _pixels(x: Tensor) -> Tensor:
    """``[B, C, H, W]`` -> ``[B, H*W, C]``."""
    B, C, H, W = x.shape
    return T.permute(T.reshape(x, (B, C, H * W)), (0, 2, 1))


def lvc_assignments(x: Tensor, cb: Codebook) -> Tensor:
    """Soft assignment of every pixel to every codeword, ``[B, N, K]``; rows sum to 1."""
    if x.ndim != 4 or x.shape[1] != cb.dim:
        raise ShapeError(f"features {x.shape} do not match codeword dim {cb.dim}")
    d = T.scaled_l2(_pixels(x), cb.codewords, cb.smoothing)
    return T.softmax_axis(T.scale(d, -1.0), axis=2)


def lvc_residuals(x: Tensor, cb: Codebook) -> Tensor:
    """Assignment-weighted residuals summed over pixels, one per codeword: ``[B, K, C]``."""
    a = lvc_assignments(x, cb)
    return T.aggregate(a, _pixels(x), cb.codewords)


def lvc_encode(x: Tensor, cb: Codebook, phi_bn: BatchNormParams) -> Tensor:
    """Whole-image code ``e`` of shape ``[B, C]``: mean over codewords of relu(bn(e_k))."""
    if phi_bn.channels != cb.size:
        raise ShapeError(f"phi batch norm has {phi_bn.channels} channels for {cb.size} codewords")
    return T.mean_axis(T.relu(phi_bn(lvc_residuals(x, cb))), axis=1)


def lvc_gate(e: Tensor, p: LvcParams) -> Tensor:
    """Per-sample channel weights in (0, 1), shape ``[B, C]``."""
    B, C = e.shape
    z = T.conv2d(T.reshape(p.fc(e), (B, C, 1, 1)), p.proj)
    return T.sigmoid(T.reshape(z, (B, C)))


def lvc_encoder_features(x_in: Tensor, p: LvcParams) -> Tensor:
    h = x_in
    for layer in p.conv_block:
        h = layer(h)
    return p.cbr(h)


def lvc_forward(x_in: Tensor, p: LvcParams) -> Tensor:
    e = lvc_encode(lvc_encoder_features(x_in, p), p.codebook, p.phi_bn)
    z = T.channel_broadcast_mul(x_in, lvc_gate(e, p))
    return T.add(x_in, z)


def evc_branches(x4: Tensor, p: EvcParams, training: bool = False, rng=None) -> tuple:
    """``(x_in, mlp_out, lvc_out)`` before fusion."""
    x_in = stem_forward(x4, p.stem)
    return x_in, lightweight_mlp_forward(x_in, p.mlp, training, rng), lvc_forward(x_in, p.lvc)


def evc_concat(x4: Tensor, p: EvcParams, training: bool = False, rng=None) -> Tensor:
    """The ``2C``-channel concatenation ``[mlp_out, lvc_out]``."""
    _, mlp_out, lvc_out = evc_branches(x4, p, training, rng)
    return T.concat_channels([mlp_out, lvc_out])


def evc_forward(x4: Tensor, p: EvcParams, training: bool = False, rng=None) -> Tensor:
    return T.conv2d(evc_concat(x4, p, training, rng), p.fuse_proj)
