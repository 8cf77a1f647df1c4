"""Dense tensor values, primitive ops and an opt-in reverse-mode tape.

Every op is a plain function returning a new immutable :class:`Tensor`.
Nothing is recorded unless one of the inputs was produced by
:meth:`Tape.watch` (or by another op on that tape), so pure forward passes
stay free of bookkeeping.

    >>> tape = Tape()
    >>> x = tape.watch(Tensor([3.0]))
    >>> y = sum_all(mul(x, x))
    >>> [g] = tape.backward(y, [x])
    >>> float(g[0])
    6.0
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "Tape",
    "TapeNode",
    "ConvSpec",
    "NonFiniteError",
    "ShapeError",
    "primitive",
    "conv2d",
    "depthwise_conv2d",
    "linear",
    "group_norm",
    "batch_norm_infer",
    "activation",
    "relu",
    "silu",
    "sigmoid",
    "softmax_axis",
    "upsample_nearest2x",
    "concat_channels",
    "elementwise",
    "add",
    "mul",
    "scale",
    "channel_broadcast_mul",
    "reshape",
    "permute",
    "mean_axis",
    "sum_all",
    "droppath",
    "scaled_l2",
    "aggregate",
]

_FLOAT_DTYPES = (np.float32, np.float64)


class ShapeError(ValueError):
    """Operand shapes violate an op's contract."""


class NonFiniteError(ArithmeticError):
    """An op produced or received NaN/Inf."""


class Tensor:
    """Immutable N-d float array.

    ``data`` is a read-only ndarray (float32 unless float64 is requested,
    which the verification paths use). Values must be finite; every op
    re-checks its output, so a non-finite value never escapes.
    """

    __slots__ = ("_data", "_tape", "_id")

    def __init__(self, data, dtype=np.float32):
        arr = np.array(data, dtype=dtype)
        if arr.dtype.type not in _FLOAT_DTYPES:
            raise TypeError(f"unsupported dtype {arr.dtype}")
        if arr.ndim == 0:
            arr = arr.reshape(1)
        if any(d < 1 for d in arr.shape):
            raise ShapeError(f"shape entries must be >= 1, got {arr.shape}")
        if not np.isfinite(arr).all():
            raise NonFiniteError("tensor values must be finite")
        arr.flags.writeable = False
        self._data = arr
        self._tape: Optional[Tape] = None
        self._id: Optional[int] = None

    @classmethod
    def _wrap(cls, arr: np.ndarray) -> "Tensor":
        t = cls.__new__(cls)
        arr = np.ascontiguousarray(arr)
        arr.flags.writeable = False
        t._data = arr
        t._tape = None
        t._id = None
        return t

    @property
    def data(self) -> np.ndarray:
        return self._data

    @property
    def shape(self) -> tuple:
        return self._data.shape

    @property
    def ndim(self) -> int:
        return self._data.ndim

    @property
    def dtype(self):
        return self._data.dtype

    @property
    def size(self) -> int:
        return self._data.size

    @property
    def tracked(self) -> bool:
        return self._tape is not None

    def numpy(self) -> np.ndarray:
        """Writable copy of the values."""
        return self._data.copy()

    def astype(self, dtype) -> "Tensor":
        return Tensor._wrap(self._data.astype(dtype))

    def detach(self) -> "Tensor":
        return Tensor._wrap(self._data)

    def __repr__(self) -> str:
        flag = ", tracked" if self.tracked else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"


@dataclass
class TapeNode:
    op: str
    inputs: tuple
    output: int
    vjp: Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]
    ctx: Optional[dict] = None


@dataclass
class Tape:
    """Append-only record of ops, replayed backwards by :meth:`backward`.

    A tape is single-owner; do not share one across threads.
    """

    nodes: list = field(default_factory=list)
    _next_id: int = 0

    def _new_id(self) -> int:
        self._next_id += 1
        return self._next_id

    def watch(self, t: Tensor) -> Tensor:
        """Return an alias of ``t`` whose uses are recorded on this tape."""
        out = Tensor._wrap(t.data)
        out._tape = self
        out._id = self._new_id()
        return out

    def _record(self, op, inputs, out, vjp, ctx=None):
        out._tape = self
        out._id = self._new_id()
        ids = tuple(t._id if t is not None and t._tape is self else None for t in inputs)
        self.nodes.append(TapeNode(op, ids, out._id, vjp, ctx))

    def backward(self, output: Tensor, wrt: Sequence[Tensor]) -> list:
        """Gradients of scalar ``output`` w.r.t. each tensor in ``wrt``.

        Tensors not on a path to ``output`` receive zeros.
        """
        if output.size != 1:
            raise ShapeError(f"backward needs a scalar output, got shape {output.shape}")
        if output._tape is not self:
            raise ValueError("output was not recorded on this tape")
        grads = {output._id: np.ones_like(output.data)}
        for node in reversed(self.nodes):
            g = grads.pop(node.output, None)
            if g is None:
                continue
            in_grads = node.vjp(g)
            for i, gi in zip(node.inputs, in_grads):
                if i is None or gi is None:
                    continue
                assert i < node.output, "tape is not topologically ordered"
                if i in grads:
                    grads[i] = grads[i] + gi
                else:
                    grads[i] = gi
        out = []
        for t in wrt:
            if t._tape is not self:
                raise ValueError("gradient requested for a tensor not on this tape")
            g = grads.get(t._id)
            out.append(np.zeros_like(t.data) if g is None else g.reshape(t.shape))
        return out


def _tape_of(inputs) -> Optional[Tape]:
    tape = None
    for t in inputs:
        if t is not None and t._tape is not None:
            if tape is not None and t._tape is not tape:
                raise ValueError("inputs are recorded on different tapes")
            tape = t._tape
    return tape


def primitive(op: str, inputs: Sequence[Optional[Tensor]], value: np.ndarray, vjp, ctx=None) -> Tensor:
    """Wrap ``value`` as the result of ``op`` and record it if any input is tracked.

    ``vjp(g)`` must return one gradient (or None) per entry of ``inputs``.
    ``ctx`` is kept on the tape node for inspection. This is also the
    extension point for custom ops.
    """
    if not np.isfinite(value).all():
        raise NonFiniteError(f"{op}: produced non-finite values")
    out = Tensor._wrap(value)
    tape = _tape_of(inputs)
    if tape is not None:
        tape._record(op, tuple(inputs), out, vjp, ctx)
    return out


def _pair(v) -> tuple:
    if isinstance(v, (tuple, list)):
        a, b = v
        return int(a), int(b)
    return int(v), int(v)


# ---------------------------------------------------------------- convolution


@dataclass
class ConvSpec:
    """Convolution hyper-parameters plus weights ``[out, in/groups, kh, kw]``."""

    in_channels: int
    out_channels: int
    kernel: tuple
    stride: int
    padding: int
    groups: int
    weight: Tensor
    bias: Optional[Tensor] = None

    def __post_init__(self):
        self.kernel = _pair(self.kernel)
        if self.in_channels % self.groups or self.out_channels % self.groups:
            raise ShapeError(
                f"channels ({self.in_channels}->{self.out_channels}) not divisible by groups={self.groups}"
            )
        expected = (self.out_channels, self.in_channels // self.groups) + self.kernel
        if tuple(self.weight.shape) != expected:
            raise ShapeError(f"conv weight shape {self.weight.shape} != {expected}")
        if self.bias is not None and tuple(self.bias.shape) != (self.out_channels,):
            raise ShapeError(f"conv bias shape {self.bias.shape} != ({self.out_channels},)")

    @property
    def depthwise(self) -> bool:
        return self.groups == self.in_channels == self.out_channels


def _out_size(size: int, k: int, stride: int, pad: int) -> int:
    span = size + 2 * pad - k
    if span < 0 or span % stride:
        raise ShapeError(
            f"non-integral conv output: size={size} kernel={k} stride={stride} padding={pad}"
        )
    return span // stride + 1


def _conv_raw(x, w, b, stride, padding, groups):
    B, C, H, W = x.shape
    O, Cg, kh, kw = w.shape
    Ho = _out_size(H, kh, stride, padding)
    Wo = _out_size(W, kw, stride, padding)
    if padding:
        xp = np.zeros((B, C, H + 2 * padding, W + 2 * padding), dtype=x.dtype)
        xp[:, :, padding : padding + H, padding : padding + W] = x
    else:
        xp = x
    if kh == kw == 1 and stride == 1:
        cols = xp.reshape(B, C, 1, 1, Ho, Wo)
    else:
        # cols[b, c, i, j, h, w] = xp[b, c, h*s + i, w*s + j]
        cols = np.empty((B, C, kh, kw, Ho, Wo), dtype=xp.dtype)
        for i in range(kh):
            for j in range(kw):
                cols[:, :, i, j] = xp[:, :, i : i + stride * Ho : stride, j : j + stride * Wo : stride]
    G = groups
    cols_g = cols.reshape(B, G, Cg, kh, kw, Ho, Wo)
    w_g = w.reshape(G, O // G, Cg, kh, kw)
    if G == 1:
        out = np.tensordot(w_g[0], cols_g[:, 0], axes=([1, 2, 3], [1, 2, 3]))  # [O, B, Ho, Wo]
        out = out.transpose(1, 0, 2, 3)
    elif Cg == 1 and O == G:
        out = np.einsum("cij,bcijhw->bchw", w[:, 0], cols)
    else:
        out = np.einsum("gocij,bgcijhw->bgohw", w_g, cols_g).reshape(B, O, Ho, Wo)
    if b is not None:
        out = out + b.reshape(1, O, 1, 1)
    return out, cols_g, xp.shape


def conv2d(x: Tensor, spec: ConvSpec) -> Tensor:
    """2-D cross-correlation with zero padding over ``[B, C, H, W]`` input."""
    if x.ndim != 4:
        raise ShapeError(f"conv2d expects a 4-D input, got {x.shape}")
    if x.shape[1] != spec.in_channels:
        raise ShapeError(f"conv2d input has {x.shape[1]} channels, spec expects {spec.in_channels}")
    s, p, G = spec.stride, spec.padding, spec.groups
    w = spec.weight.data
    bias = spec.bias.data if spec.bias is not None else None
    out, cols_g, padded_shape = _conv_raw(x.data, w, bias, s, p, G)
    B, C, H, W = x.shape
    O, Cg, kh, kw = w.shape
    Ho, Wo = out.shape[2:]

    def vjp(g):
        g_g = g.reshape(B, G, O // G, Ho, Wo)
        w_g = w.reshape(G, O // G, Cg, kh, kw)
        dw = np.einsum("bgohw,bgcijhw->gocij", g_g, cols_g, optimize=True).reshape(w.shape)
        dcols = np.einsum("bgohw,gocij->bgcijhw", g_g, w_g, optimize=True).reshape(B, C, kh, kw, Ho, Wo)
        dxp = np.zeros(padded_shape, dtype=dcols.dtype)
        for i in range(kh):
            for j in range(kw):
                dxp[:, :, i : i + s * Ho : s, j : j + s * Wo : s] += dcols[:, :, i, j]
        dx = dxp[:, :, p : p + H, p : p + W] if p else dxp
        db = g.sum(axis=(0, 2, 3)) if bias is not None else None
        return dx, dw, db

    return primitive("conv2d", (x, spec.weight, spec.bias), out, vjp)


def depthwise_conv2d(x: Tensor, spec: ConvSpec) -> Tensor:
    """Per-channel convolution; requires ``groups == in_channels == out_channels``."""
    if not spec.depthwise:
        raise ShapeError(
            f"depthwise conv needs groups == in == out, got groups={spec.groups} "
            f"in={spec.in_channels} out={spec.out_channels}"
        )
    return conv2d(x, spec)


# ------------------------------------------------------------- dense & norms


def linear(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    """``y = x W^T + b`` over the last axis."""
    d_out, d_in = weight.shape
    if x.shape[-1] != d_in:
        raise ShapeError(f"linear: last dim {x.shape[-1]} != weight in-dim {d_in}")
    if bias is not None and bias.shape != (d_out,):
        raise ShapeError(f"linear: bias shape {bias.shape} != ({d_out},)")
    xd, wd = x.data, weight.data
    out = xd @ wd.T
    if bias is not None:
        out = out + bias.data

    def vjp(g):
        g2 = g.reshape(-1, d_out)
        x2 = xd.reshape(-1, d_in)
        return g @ wd, g2.T @ x2, (g2.sum(axis=0) if bias is not None else None)

    return primitive("linear", (x, weight, bias), out, vjp)


def group_norm(x: Tensor, groups: int, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize each (sample, channel-group) to zero mean / unit variance, then affine."""
    if x.ndim != 4:
        raise ShapeError(f"group_norm expects [B, C, H, W], got {x.shape}")
    B, C, H, W = x.shape
    if groups < 1 or C % groups:
        raise ShapeError(f"group_norm: {C} channels not divisible by {groups} groups")
    if gamma.shape != (C,) or beta.shape != (C,):
        raise ShapeError("group_norm: gamma/beta must have one entry per channel")
    if eps <= 0:
        raise ValueError("eps must be positive")
    xg = x.data.reshape(B, groups, -1)
    mu = xg.mean(axis=2, keepdims=True)
    var = xg.var(axis=2, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = ((xg - mu) * inv).reshape(B, C, H, W)
    ga = gamma.data.reshape(1, C, 1, 1)
    out = xhat * ga + beta.data.reshape(1, C, 1, 1)

    def vjp(g):
        dgamma = (g * xhat).sum(axis=(0, 2, 3))
        dbeta = g.sum(axis=(0, 2, 3))
        dxhat = (g * ga).reshape(B, groups, -1)
        xh = xhat.reshape(B, groups, -1)
        dx = inv * (dxhat - dxhat.mean(axis=2, keepdims=True) - xh * (dxhat * xh).mean(axis=2, keepdims=True))
        return dx.reshape(B, C, H, W), dgamma, dbeta

    return primitive("group_norm", (x, gamma, beta), out, vjp)


def batch_norm_infer(
    x: Tensor,
    running_mean: Tensor,
    running_var: Tensor,
    gamma: Tensor,
    beta: Tensor,
    eps: float = 1e-5,
) -> Tensor:
    """Inference-mode batch norm with fixed statistics along axis 1."""
    if x.ndim < 2:
        raise ShapeError("batch_norm_infer needs at least [B, C]")
    C = x.shape[1]
    for name, t in (("running_mean", running_mean), ("running_var", running_var), ("gamma", gamma), ("beta", beta)):
        if t.shape != (C,):
            raise ShapeError(f"batch_norm_infer: {name} has shape {t.shape}, expected ({C},)")
    if eps <= 0:
        raise ValueError("eps must be positive")
    bshape = (1, C) + (1,) * (x.ndim - 2)
    red = (0,) + tuple(range(2, x.ndim))
    inv = (1.0 / np.sqrt(running_var.data + eps)).reshape(bshape)
    centered = x.data - running_mean.data.reshape(bshape)
    xhat = centered * inv
    ga = gamma.data.reshape(bshape)
    out = xhat * ga + beta.data.reshape(bshape)

    def vjp(g):
        gx = g * ga * inv
        dmean = -gx.sum(axis=red)
        dvar = (-0.5 * g * ga * centered * inv**3).sum(axis=red)
        return gx, dmean, dvar, (g * xhat).sum(axis=red), g.sum(axis=red)

    return primitive("batch_norm_infer", (x, running_mean, running_var, gamma, beta), out, vjp)


# ---------------------------------------------------------------- pointwise


def _sigmoid_np(v):
    # split by sign so exp never overflows
    out = np.empty_like(v)
    pos = v >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-v[pos]))
    e = np.exp(v[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def activation(x: Tensor, kind: str) -> Tensor:
    """Elementwise ``relu`` | ``silu`` | ``sigmoid``.

    The ReLU subgradient at exactly zero is taken as zero.
    """
    v = x.data
    if kind == "relu":
        mask = v > 0
        return primitive("relu", (x,), v * mask, lambda g: (g * mask,), ctx={"mask": mask})
    if kind == "sigmoid":
        s = _sigmoid_np(v)
        return primitive("sigmoid", (x,), s, lambda g: (g * s * (1 - s),))
    if kind == "silu":
        s = _sigmoid_np(v)
        return primitive("silu", (x,), v * s, lambda g: (g * (s + v * s * (1 - s)),))
    raise ValueError(f"unknown activation {kind!r}")


def relu(x: Tensor) -> Tensor:
    return activation(x, "relu")


def silu(x: Tensor) -> Tensor:
    return activation(x, "silu")


def sigmoid(x: Tensor) -> Tensor:
    return activation(x, "sigmoid")


def softmax_axis(x: Tensor, axis: int) -> Tensor:
    """Max-subtracted softmax along ``axis``."""
    if not -x.ndim <= axis < x.ndim:
        raise ShapeError(f"axis {axis} out of range for {x.ndim}-D tensor")
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)

    def vjp(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return primitive("softmax", (x,), y, vjp)


def upsample_nearest2x(x: Tensor) -> Tensor:
    """Replicate every pixel of ``[B, C, H, W]`` into a 2x2 block."""
    if x.ndim != 4:
        raise ShapeError(f"upsample expects [B, C, H, W], got {x.shape}")
    B, C, H, W = x.shape
    out = np.repeat(np.repeat(x.data, 2, axis=2), 2, axis=3)

    def vjp(g):
        return (g.reshape(B, C, H, 2, W, 2).sum(axis=(3, 5)),)

    return primitive("upsample_nearest2x", (x,), out, vjp)


def concat_channels(xs: Sequence[Tensor]) -> Tensor:
    """Stack ``[B, C_i, H, W]`` maps along channels in argument order."""
    if not xs:
        raise ShapeError("concat_channels needs at least one input")
    ref = xs[0].shape
    for t in xs:
        if t.ndim != 4 or t.shape[0] != ref[0] or t.shape[2:] != ref[2:]:
            raise ShapeError(f"concat_channels: incompatible shapes {[t.shape for t in xs]}")
    out = np.concatenate([t.data for t in xs], axis=1)
    bounds = np.cumsum([0] + [t.shape[1] for t in xs])

    def vjp(g):
        return tuple(g[:, bounds[i] : bounds[i + 1]] for i in range(len(xs)))

    return primitive("concat_channels", tuple(xs), out, vjp)


def elementwise(x: Tensor, y: Tensor, kind: str) -> Tensor:
    """Pointwise ``add`` or ``mul`` of equal-shape tensors."""
    if x.shape != y.shape:
        raise ShapeError(f"{kind}: shape mismatch {x.shape} vs {y.shape}")
    a, b = x.data, y.data
    if kind == "add":
        return primitive("add", (x, y), a + b, lambda g: (g, g))
    if kind == "mul":
        return primitive("mul", (x, y), a * b, lambda g: (g * b, g * a))
    raise ValueError(f"unknown elementwise kind {kind!r}")


def add(x: Tensor, y: Tensor) -> Tensor:
    return elementwise(x, y, "add")


def mul(x: Tensor, y: Tensor) -> Tensor:
    return elementwise(x, y, "mul")


def scale(x: Tensor, alpha: float) -> Tensor:
    """Multiply by a constant scalar."""
    alpha = float(alpha)
    return primitive("scale", (x,), x.data * x.dtype.type(alpha), lambda g: (g * alpha,))


def channel_broadcast_mul(x: Tensor, w: Tensor) -> Tensor:
    """Scale every spatial location of channel ``c`` by ``w[c]`` (or ``w[b, c]``)."""
    if x.ndim != 4:
        raise ShapeError(f"channel_broadcast_mul expects [B, C, H, W], got {x.shape}")
    B, C = x.shape[:2]
    if w.shape == (C,):
        wb = w.data.reshape(1, C, 1, 1)
        red = (0, 2, 3)
    elif w.shape == (B, C):
        wb = w.data.reshape(B, C, 1, 1)
        red = (2, 3)
    else:
        raise ShapeError(f"channel weights {w.shape} do not match input {x.shape}")
    xd = x.data

    def vjp(g):
        return g * wb, (g * xd).sum(axis=red)

    return primitive("channel_broadcast_mul", (x, w), xd * wb, vjp)


# ------------------------------------------------------------------ layout


def reshape(x: Tensor, shape) -> Tensor:
    shape = tuple(int(s) for s in shape)
    out = x.data.reshape(shape)
    return primitive("reshape", (x,), out, lambda g: (g.reshape(x.shape),))


def permute(x: Tensor, axes) -> Tensor:
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))
    out = x.data.transpose(axes)
    return primitive("permute", (x,), out, lambda g: (g.transpose(inverse),))


def mean_axis(x: Tensor, axis: int) -> Tensor:
    n = x.shape[axis]
    out = x.data.mean(axis=axis)

    def vjp(g):
        return (np.broadcast_to(np.expand_dims(g, axis) / n, x.shape),)

    return primitive("mean_axis", (x,), out, vjp)


def sum_all(x: Tensor) -> Tensor:
    out = np.array([x.data.sum()], dtype=x.dtype)
    return primitive("sum_all", (x,), out, lambda g: (np.broadcast_to(g.reshape(()), x.shape),))


def droppath(
    x: Tensor,
    rate: float,
    rng: Optional[np.random.Generator] = None,
    training: bool = False,
    rescale: bool = False,
) -> Tensor:
    """Per-sample stochastic branch dropping.

    Identity in eval mode. In train mode each sample's branch is kept with
    probability ``1 - rate``; with ``rescale`` the kept branches are divided
    by ``1 - rate``.
    """
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"droppath rate must be in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return x
    if rng is None:
        raise ValueError("train-mode droppath needs an explicit rng")
    keep = (rng.random(x.shape[0]) >= rate).astype(x.dtype)
    if rescale:
        keep = keep / x.dtype.type(1.0 - rate)
    mask = keep.reshape((-1,) + (1,) * (x.ndim - 1))
    return primitive("droppath", (x,), x.data * mask, lambda g: (g * mask,))


# ------------------------------------------------------------ codebook ops


def scaled_l2(x: Tensor, codewords: Tensor, smoothing: Tensor) -> Tensor:
    """``d[b, n, k] = s_k * ||x[b, n] - c_k||^2`` for ``x`` of shape ``[B, N, C]``."""
    if x.ndim != 3:
        raise ShapeError(f"scaled_l2 expects [B, N, C], got {x.shape}")
    K, C = codewords.shape
    if x.shape[2] != C:
        raise ShapeError(f"feature dim {x.shape[2]} != codeword dim {C}")
    if smoothing.shape != (K,):
        raise ShapeError(f"smoothing factors {smoothing.shape} != ({K},)")
    resid = x.data[:, :, None, :] - codewords.data[None, None]  # [B, N, K, C]
    sq = (resid * resid).sum(axis=3)
    s = smoothing.data
    out = sq * s

    def vjp(g):
        gr = (2.0 * g * s)[..., None] * resid
        return gr.sum(axis=2), -gr.sum(axis=(0, 1)), (g * sq).sum(axis=(0, 1))

    return primitive("scaled_l2", (x, codewords, smoothing), out, vjp)


def aggregate(weights: Tensor, x: Tensor, codewords: Tensor) -> Tensor:
    """``e[b, k] = sum_n a[b, n, k] * (x[b, n] - c_k)``, shape ``[B, K, C]``."""
    B, N, K = weights.shape
    if x.shape[:2] != (B, N) or codewords.shape != (K, x.shape[2]):
        raise ShapeError(
            f"aggregate: weights {weights.shape}, features {x.shape}, codewords {codewords.shape}"
        )
    a, xd, cw = weights.data, x.data, codewords.data
    mass = a.sum(axis=1)  # [B, K]
    # summing the residuals directly avoids cancellation between a^T x and mass * c_k
    resid = xd[:, :, None, :] - cw[None, None]  # [B, N, K, C]
    out = np.einsum("bnk,bnkc->bkc", a, resid)

    def vjp(g):
        da = np.einsum("bkc,bnkc->bnk", g, resid)
        dx = np.einsum("bnk,bkc->bnc", a, g)
        dc = -(mass[..., None] * g).sum(axis=0)
        return da, dx, dc

    return primitive("aggregate", (weights, x, codewords), out, vjp)
