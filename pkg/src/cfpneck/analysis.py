"""Parameter/FLOP accounting, finite-difference gradient checks and latency timing.

FLOP convention: one multiply-accumulate is 2 FLOPs, bias adds cost 1 per
output element, and the cheap per-element ops use the constants in
``FLOP_CONSTANTS``. Data movement (reshape, permute, concat, upsample)
is free. Dropping a residual branch costs nothing in eval mode.
"""

from __future__ import annotations

import math
import os
import time
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from . import params as P
from . import tensor as T
from .evc import ConvBnAct, EvcParams, LvcParams, MlpBlockParams
from .gcr import CfpParams, GcrConfig, Pyramid, PyramidError
from .layers import BatchNormParams, GroupNormParams, LinearParams
from .tensor import ConvSpec, NonFiniteError, Tensor

FLOP_CONSTANTS = {
    "mac": 2,
    "bias": 1,
    "batch_norm": 2,  # stats folded into one scale and one shift
    "group_norm": 8,  # mean 1, variance 3, normalize 2, affine 2
    "relu": 1,
    "sigmoid": 4,
    "silu": 5,
    "add": 1,
    "channel_mul": 1,
    "mean": 1,
    "lvc_distance": 2,  # per (pixel, codeword, channel)
    "lvc_softmax": 4,  # per (pixel, codeword): smoothing scale, exp, sum, divide
    "lvc_aggregate": 2,  # per (pixel, codeword, channel)
}


@dataclass
class CostEntry:
    name: str
    params: int = 0
    buffers: int = 0
    flops: int = 0


@dataclass
class CostReport:
    """Totals plus a per-submodule breakdown that sums to them."""

    params: int = 0
    buffers: int = 0
    flops: int = 0
    breakdown: list = field(default_factory=list)
    input_shape: Optional[object] = None

    def consistent(self) -> bool:
        return (
            sum(e.params for e in self.breakdown) == self.params
            and sum(e.buffers for e in self.breakdown) == self.buffers
            and sum(e.flops for e in self.breakdown) == self.flops
        )

    def merged(self, other: "CostReport") -> "CostReport":
        """Combine a params-only and a flops-only report over the same module."""
        entries = {e.name: CostEntry(e.name, e.params, e.buffers, e.flops) for e in self.breakdown}
        order = [e.name for e in self.breakdown]
        for e in other.breakdown:
            if e.name not in entries:
                entries[e.name] = CostEntry(e.name)
                order.append(e.name)
            tgt = entries[e.name]
            tgt.params += e.params
            tgt.buffers += e.buffers
            tgt.flops += e.flops
        return CostReport(
            self.params + other.params,
            self.buffers + other.buffers,
            self.flops + other.flops,
            [entries[n] for n in order],
            self.input_shape if self.input_shape is not None else other.input_shape,
        )

    def to_dict(self) -> dict:
        return {
            "convention": "1 MAC = 2 FLOPs; " + ", ".join(f"{k}={v}" for k, v in FLOP_CONSTANTS.items()),
            "input_shape": _shape_repr(self.input_shape),
            "params": self.params,
            "buffers": self.buffers,
            "flops": self.flops,
            "breakdown": [vars(e).copy() for e in self.breakdown],
        }

    def to_text(self) -> str:
        d = self.to_dict()
        lines = [f"convention: {d['convention']}"]
        if d["input_shape"] is not None:
            lines.append(f"input_shape: {d['input_shape']}")
        lines += [f"params: {self.params}", f"buffers: {self.buffers}", f"flops: {self.flops}", "breakdown:"]
        for e in self.breakdown:
            lines.append(f"  {e.name}:")
            lines.append(f"    params: {e.params}")
            lines.append(f"    buffers: {e.buffers}")
            lines.append(f"    flops: {e.flops}")
        return "\n".join(lines) + "\n"


def _shape_repr(shape):
    if shape is None:
        return None
    if isinstance(shape, dict):
        return "; ".join(f"X{i}={','.join(map(str, s))}" for i, s in shape.items())
    return ",".join(map(str, shape))


# ------------------------------------------------------------------ params


def count_params(params) -> CostReport:
    """Trainable parameter and stored-statistic counts, grouped by owning submodule."""
    if params is None:
        return CostReport()
    meta = P.tensor_metadata(params)
    groups: dict = {}
    total_params = total_buffers = 0
    for name, t in P.named_tensors(params).items():
        owner = name.rsplit(".", 1)[0] if "." in name else name
        entry = groups.setdefault(owner, CostEntry(owner))
        if meta[name].get("buffer"):
            entry.buffers += t.size
            total_buffers += t.size
        else:
            entry.params += t.size
            total_params += t.size
    return CostReport(total_params, total_buffers, 0, list(groups.values()))


# ------------------------------------------------------------------- flops


class _FlopCounter:
    def __init__(self):
        self.entries: list = []

    def add(self, name: str, flops: int) -> None:
        self.entries.append(CostEntry(name, flops=int(flops)))

    def conv(self, name, spec: ConvSpec, shape) -> tuple:
        B, C, H, W = shape
        if C != spec.in_channels:
            raise T.ShapeError(f"{name}: input has {C} channels, conv expects {spec.in_channels}")
        kh, kw = spec.kernel
        Ho = T._out_size(H, kh, spec.stride, spec.padding)
        Wo = T._out_size(W, kw, spec.stride, spec.padding)
        per_out = FLOP_CONSTANTS["mac"] * (spec.in_channels // spec.groups) * kh * kw
        if spec.bias is not None:
            per_out += FLOP_CONSTANTS["bias"]
        self.add(name, B * spec.out_channels * Ho * Wo * per_out)
        return (B, spec.out_channels, Ho, Wo)

    def linear(self, name, lp: LinearParams, positions: int) -> None:
        per = FLOP_CONSTANTS["mac"] * lp.in_features * lp.out_features
        if lp.bias is not None:
            per += FLOP_CONSTANTS["bias"] * lp.out_features
        self.add(name, positions * per)

    def pointwise(self, name, kind: str, shape) -> None:
        self.add(name, FLOP_CONSTANTS[kind] * math.prod(shape))

    def conv_bn_act(self, name, p: ConvBnAct, shape) -> tuple:
        shape = self.conv(f"{name}.conv", p.conv, shape)
        self.pointwise(f"{name}.bn", "batch_norm", shape)
        self.pointwise(f"{name}.act", p.act, shape)
        return shape

    def mlp_block(self, name, p: MlpBlockParams, shape) -> tuple:
        B, C, H, W = shape
        self.pointwise(f"{name}.gn1", "group_norm", shape)
        self.conv(f"{name}.dconv", p.dconv, shape)
        self.pointwise(f"{name}.scale1", "channel_mul", shape)
        self.pointwise(f"{name}.residual1", "add", shape)
        self.pointwise(f"{name}.gn2", "group_norm", shape)
        self.linear(f"{name}.fc1", p.fc1, B * H * W)
        self.pointwise(f"{name}.act", p.act, (B, H, W, p.fc1.out_features))
        self.linear(f"{name}.fc2", p.fc2, B * H * W)
        self.pointwise(f"{name}.scale2", "channel_mul", shape)
        self.pointwise(f"{name}.residual2", "add", shape)
        return shape

    def lvc(self, name, p: LvcParams, shape) -> tuple:
        h = shape
        for i, layer in enumerate(p.conv_block):
            h = self.conv_bn_act(f"{name}.conv_block.{i}", layer, h)
        h = self.conv_bn_act(f"{name}.cbr", p.cbr, h)
        B, C, H, W = h
        N, K = H * W, p.codebook.size
        self.add(f"{name}.codebook.distance", B * FLOP_CONSTANTS["lvc_distance"] * N * K * C)
        self.add(f"{name}.codebook.softmax", B * FLOP_CONSTANTS["lvc_softmax"] * N * K)
        self.add(f"{name}.codebook.aggregate", B * FLOP_CONSTANTS["lvc_aggregate"] * N * K * C)
        self.pointwise(f"{name}.phi_bn", "batch_norm", (B, K, C))
        self.pointwise(f"{name}.phi_relu", "relu", (B, K, C))
        self.pointwise(f"{name}.phi_mean", "mean", (B, K, C))
        self.linear(f"{name}.fc", p.fc, B)
        self.conv(f"{name}.proj", p.proj, (B, C, 1, 1))
        self.pointwise(f"{name}.gate", "sigmoid", (B, C))
        self.pointwise(f"{name}.channel_mul", "channel_mul", shape)
        self.pointwise(f"{name}.residual", "add", shape)
        return shape

    def evc(self, name, p: EvcParams, shape) -> tuple:
        pre = f"{name}." if name else ""
        x_in = self.conv_bn_act(f"{pre}stem", p.stem, shape)
        self.mlp_block(f"{pre}mlp", p.mlp, x_in)
        self.lvc(f"{pre}lvc", p.lvc, x_in)
        B, C, H, W = x_in
        return self.conv(f"{pre}fuse_proj", p.fuse_proj, (B, 2 * C, H, W))

    def cfp(self, p: CfpParams, shapes: dict, cfg: GcrConfig) -> None:
        if cfg.evc_level not in shapes:
            raise PyramidError(f"no input shape for EVC level {cfg.evc_level}")
        for _ in range(cfg.repeat):
            reg = self.evc("evc", p.evc, tuple(shapes[cfg.evc_level]))
            new = dict(shapes)
            new[cfg.evc_level] = reg
            for i in cfg.top_down:
                if i not in shapes:
                    raise PyramidError(f"no input shape for regulated level {i}")
                lat = self.conv(f"lateral.{i}", p.lateral[i], tuple(shapes[i]))
                new[i] = self.conv(f"fuse.{i}", p.fuse[i], (lat[0], 2 * lat[1], lat[2], lat[3]))
            shapes = new


def count_flops(params, input_shape, gcr_cfg: Optional[GcrConfig] = None) -> CostReport:
    """FLOPs of one eval-mode forward pass.

    ``input_shape`` is ``[B, C, H, W]`` for a single block, or
    ``{level: shape}`` for a whole :class:`CfpParams` pyramid. Entries for
    repeated passes accumulate under the same names.
    """
    fc = _FlopCounter()
    if params is None:
        pass
    elif isinstance(params, CfpParams):
        fc.cfp(params, {int(k): tuple(v) for k, v in dict(input_shape).items()}, gcr_cfg or GcrConfig())
    elif isinstance(params, EvcParams):
        fc.evc("", params, tuple(input_shape))
    elif isinstance(params, ConvSpec):
        fc.conv("conv", params, tuple(input_shape))
    elif isinstance(params, ConvBnAct):
        fc.conv_bn_act("block", params, tuple(input_shape))
    elif isinstance(params, MlpBlockParams):
        fc.mlp_block("mlp", params, tuple(input_shape))
    elif isinstance(params, LvcParams):
        fc.lvc("lvc", params, tuple(input_shape))
    elif isinstance(params, LinearParams):
        fc.linear("linear", params, math.prod(tuple(input_shape)[:-1]))
    elif isinstance(params, BatchNormParams):
        fc.pointwise("bn", "batch_norm", tuple(input_shape))
    elif isinstance(params, GroupNormParams):
        fc.pointwise("gn", "group_norm", tuple(input_shape))
    else:
        raise TypeError(f"no FLOP model for {type(params).__name__}")
    merged: dict = {}
    for e in fc.entries:
        merged.setdefault(e.name, CostEntry(e.name)).flops += e.flops
    total = sum(e.flops for e in fc.entries)
    shape = dict(input_shape) if isinstance(input_shape, dict) else input_shape
    return CostReport(0, 0, total, list(merged.values()), shape)


def cost_report(params, input_shape, gcr_cfg: Optional[GcrConfig] = None) -> CostReport:
    """Parameter counts and FLOPs in one report."""
    return count_params(params).merged(count_flops(params, input_shape, gcr_cfg))


# ------------------------------------------------------------- grad check


@dataclass
class GradEntry:
    name: str
    size: int
    max_rel_error: float
    index: tuple
    seed: int
    analytic: float
    numeric: float
    passed: bool
    kinks: int = 0


@dataclass
class GradReport:
    tol: float
    h: float
    seeds: tuple
    entries: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(e.passed for e in self.entries)

    @property
    def max_rel_error(self) -> float:
        return max((e.max_rel_error for e in self.entries), default=0.0)

    @property
    def failures(self) -> list:
        return [e for e in self.entries if not e.passed]

    @property
    def checked(self) -> int:
        return sum(e.size for e in self.entries) * len(self.seeds)

    @property
    def kinks(self) -> int:
        return sum(e.kinks for e in self.entries)

    def to_text(self) -> str:
        lines = [
            f"tol: {self.tol}",
            f"h: {self.h}",
            f"seeds: {','.join(map(str, self.seeds))}",
            f"passed: {self.passed}",
            f"max_rel_error: {self.max_rel_error:.3e}",
            f"coordinates: {self.checked}",
            f"kinks_excluded: {self.kinks}",
            "parameters:",
        ]
        for e in self.entries:
            lines.append(
                f"  {e.name}: max_rel_error={e.max_rel_error:.3e} index={list(e.index)} "
                f"seed={e.seed} kinks={e.kinks} {'ok' if e.passed else 'FAIL'}"
            )
        return "\n".join(lines) + "\n"


def relative_error(analytic, numeric) -> np.ndarray:
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), 1e-8)


def grad_check(
    block: Callable,
    make_params: Callable,
    shapes: Sequence,
    seeds: Sequence[int] = (0, 1, 2),
    tol: float = 1e-3,
    h: float = 1e-3,
    check_inputs: bool = True,
) -> GradReport:
    """Compare tape gradients of ``block`` against central differences, in float64.

    ``block(params, *inputs)`` returns a tensor; the checked scalar is its
    dot product with a fixed random direction. ``make_params(rng)`` builds
    the parameter tree for a seed; ``shapes`` gives one shape per input.

    A coordinate whose +h and -h evaluations put some ReLU on different
    sides of zero straddles a kink, where a central difference is not a
    valid derivative estimate. Such coordinates are excluded from the
    error and counted in ``kinks``. Other coordinates over ``tol`` are
    re-estimated with the fourth-order stencil at the same ``h`` before
    being reported as failures.
    """
    report = GradReport(tol, h, tuple(seeds))
    worst: dict = {}
    for seed in seeds:
        rng = np.random.default_rng(seed)
        params = P.cast(make_params(rng), np.float64)
        inputs = [Tensor(rng.normal(size=s), dtype=np.float64) for s in shapes]

        tape = T.Tape()
        wparams = P.watch(params, tape)
        winputs = [tape.watch(x) for x in inputs]
        out = block(wparams, *winputs)
        direction = Tensor(rng.normal(size=out.shape), dtype=np.float64)
        loss = T.sum_all(T.mul(out, direction))
        named = P.named_tensors(wparams)
        wrt = list(named.values()) + (winputs if check_inputs else [])
        names = list(named) + ([f"input.{i}" for i in range(len(inputs))] if check_inputs else [])
        grads = tape.backward(loss, wrt)

        def objective(p, xs):
            return float((block(p, *xs).data * direction.data).sum())

        base = P.named_tensors(params)
        for name, analytic in zip(names, grads):
            if name.startswith("input."):
                k = int(name.split(".")[1])
                value = inputs[k].data

                def f(v, tape=None, k=k):
                    xs = list(inputs)
                    xs[k] = _leaf(v, tape)
                    return objective(params, xs)

            else:
                value = base[name].data
                swap = P.replacer(params, name)

                def f(v, tape=None, swap=swap):
                    return objective(swap(_leaf(v, tape)), inputs)

            numeric = _central_difference(f, value, h)
            err = relative_error(analytic, numeric)
            if not np.isfinite(err).all():
                raise NonFiniteError(f"grad_check: non-finite error for {name}")
            kinks = 0
            for flat in np.flatnonzero(err > tol):
                if _straddles_kink(f, value, flat, h):
                    err.flat[flat] = 0.0
                    kinks += 1
                elif not _straddles_kink(f, value, flat, 2 * h):
                    # smooth here: the two-point estimate may just be truncation-limited
                    numeric.flat[flat] = _five_point(f, value, flat, h)
                    err.flat[flat] = relative_error(analytic.flat[flat], numeric.flat[flat])
            flat = int(np.argmax(err))
            idx = np.unravel_index(flat, value.shape)
            e = float(err.flat[flat])
            prev_kinks = worst[name].kinks if name in worst else 0
            if name not in worst or e > worst[name].max_rel_error:
                worst[name] = GradEntry(
                    name,
                    int(value.size),
                    e,
                    tuple(int(i) for i in idx),
                    int(seed),
                    float(analytic.flat[flat]),
                    float(numeric.flat[flat]),
                    e <= tol,
                )
            worst[name].kinks = prev_kinks + kinks
    report.entries = list(worst.values())
    return report


def _leaf(v: np.ndarray, tape) -> Tensor:
    t = Tensor._wrap(v)
    return tape.watch(t) if tape is not None else t


def _relu_masks(f: Callable, v: np.ndarray) -> list:
    tape = T.Tape()
    # tracking the perturbed tensor records every op downstream of it
    f(v, tape)
    return [n.ctx["mask"] for n in tape.nodes if n.op == "relu"]


def _straddles_kink(f: Callable, value: np.ndarray, flat: int, h: float) -> bool:
    plus = value.astype(np.float64).copy()
    minus = plus.copy()
    plus.flat[flat] += h
    minus.flat[flat] -= h
    return any(not np.array_equal(a, b) for a, b in zip(_relu_masks(f, plus), _relu_masks(f, minus)))


def _five_point(f: Callable, value: np.ndarray, flat: int, h: float) -> float:
    """Fourth-order central stencil for a single coordinate."""
    vals = []
    for step in (2 * h, h, -h, -2 * h):
        v = value.astype(np.float64).copy()
        v.flat[flat] += step
        vals.append(f(v))
    return (-vals[0] + 8 * vals[1] - 8 * vals[2] + vals[3]) / (12 * h)


def _central_difference(f: Callable, value: np.ndarray, h: float) -> np.ndarray:
    work = value.astype(np.float64).copy()
    grad = np.empty_like(work)
    flat = work.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f(work.copy())
        flat[i] = orig - h
        fm = f(work.copy())
        flat[i] = orig
        grad.flat[i] = (fp - fm) / (2 * h)
    return grad


# ----------------------------------------------------------------- latency


@dataclass
class LatencyStats:
    """Wall-clock seconds per forward call."""

    mean: float
    p50: float
    p95: float
    samples: list

    def to_text(self) -> str:
        return (
            f"iters: {len(self.samples)}\n"
            f"mean_ms: {self.mean * 1e3:.4f}\n"
            f"p50_ms: {self.p50 * 1e3:.4f}\n"
            f"p95_ms: {self.p95 * 1e3:.4f}\n"
        )


def _pin_cpu():
    if not hasattr(os, "sched_getaffinity"):
        return None
    try:
        before = os.sched_getaffinity(0)
        os.sched_setaffinity(0, {min(before)})
        return before
    except OSError:
        return None


def bench_latency(block: Callable, x, warmup: int = 3, iters: int = 20) -> LatencyStats:
    """Time ``block(x)`` forward-only; ``x`` is a Tensor or a shape to fill with zeros."""
    if iters < 1:
        raise ValueError("iters must be >= 1")
    if warmup < 0:
        raise ValueError("warmup must be >= 0")
    if not isinstance(x, Tensor):
        x = Tensor(np.zeros(tuple(x)))
    restore = _pin_cpu()
    try:
        for _ in range(warmup):
            block(x)
        samples = []
        for _ in range(iters):
            t0 = time.perf_counter()
            block(x)
            samples.append(time.perf_counter() - t0)
    finally:
        if restore is not None:
            os.sched_setaffinity(0, restore)
    arr = np.asarray(samples)
    return LatencyStats(float(arr.mean()), float(np.percentile(arr, 50)), float(np.percentile(arr, 95)), samples)


# ------------------------------------------------------------ block suite


def _shrunk_groups(evc_cfg, channels: int) -> int:
    """Group count at ``channels`` that keeps the config's channels-per-group ratio."""
    per_group = evc_cfg.channels // evc_cfg.effective_groups
    target = max(1, channels // per_group)
    return max(g for g in range(1, target + 1) if channels % g == 0)


def _suite_cases(evc_cfg, gcr_cfg) -> dict:
    """``name -> (block, make_params, shapes)`` at grad-checkable scale."""
    from dataclasses import replace

    from . import evc as E
    from . import layers as L
    from .gcr import cfp_forward, init_cfp_params

    C = 4
    small = replace(
        evc_cfg,
        channels=C,
        codewords=min(evc_cfg.codewords, 4),
        groupnorm_groups=_shrunk_groups(evc_cfg, C),
        droppath=0.0,
    )
    K = small.codewords

    def randomized(factory):
        return lambda rng: P.randomize(factory(rng), rng)

    def codebook_params(rng):
        return (E.init_codebook(rng, K, C), L.init_batch_norm(K))

    cfp_levels = sorted(set(gcr_cfg.regulated_levels) | {gcr_cfg.evc_level})
    # EVC level at 4x4, each shallower level twice the size
    cfp_shapes = [(1, C, 4 << (gcr_cfg.evc_level - i), 4 << (gcr_cfg.evc_level - i)) for i in cfp_levels]
    cfp_gcr = replace(gcr_cfg, repeat=1) if gcr_cfg.repeat > 1 else gcr_cfg

    def cfp_block(p, *maps):
        out = cfp_forward(Pyramid(dict(zip(cfp_levels, maps))), p, cfp_gcr)
        return T.concat_channels([T.reshape(t, (1, -1, 1, 1)) for t in out.to_list()])

    return {
        "linear": (lambda p, x: p(x), randomized(lambda r: L.init_linear(r, 5, 3)), [(2, 5)]),
        "conv2d": (lambda p, x: T.conv2d(x, p), randomized(lambda r: L.init_conv(r, 3, 2, 3)), [(1, 3, 4, 4)]),
        "conv2d_stride2": (
            lambda p, x: T.conv2d(x, p),
            randomized(lambda r: L.init_conv(r, 2, 3, 3, stride=2, padding=1)),
            [(2, 2, 5, 5)],
        ),
        "depthwise_conv2d": (
            lambda p, x: T.depthwise_conv2d(x, p),
            randomized(lambda r: L.init_conv(r, 3, 3, 3, groups=3)),
            [(1, 3, 4, 4)],
        ),
        "group_norm": (lambda p, x: p(x), randomized(lambda r: L.init_group_norm(4, 2)), [(2, 4, 3, 3)]),
        "batch_norm_infer": (lambda p, x: p(x), randomized(lambda r: L.init_batch_norm(3)), [(2, 3, 2, 2)]),
        "relu": (lambda p, x: T.relu(x), lambda r: None, [(2, 3, 2, 2)]),
        "silu": (lambda p, x: T.silu(x), lambda r: None, [(2, 3, 2, 2)]),
        "sigmoid": (lambda p, x: T.sigmoid(x), lambda r: None, [(2, 3, 2, 2)]),
        "softmax_axis": (lambda p, x: T.softmax_axis(x, 1), lambda r: None, [(2, 5, 3)]),
        "upsample_nearest2x": (lambda p, x: T.upsample_nearest2x(x), lambda r: None, [(1, 2, 2, 3)]),
        "concat_channels": (lambda p, x, y: T.concat_channels([x, y]), lambda r: None, [(1, 2, 2, 2), (1, 3, 2, 2)]),
        "elementwise": (lambda p, x, y: T.add(T.mul(x, y), x), lambda r: None, [(2, 3), (2, 3)]),
        "channel_broadcast_mul": (lambda p, x, w: T.channel_broadcast_mul(x, w), lambda r: None, [(2, 3, 2, 2), (2, 3)]),
        "droppath_eval": (lambda p, x: T.droppath(x, 0.5), lambda r: None, [(2, 3)]),
        "lvc_encode": (lambda p, x: E.lvc_encode(x, p[0], p[1]), randomized(codebook_params), [(2, C, 2, 2)]),
        "stem": (lambda p, x: E.stem_forward(x, p), randomized(lambda r: E.init_stem(r, C, small)), [(1, C, 4, 4)]),
        "dconv_block": (
            lambda p, x: E.dconv_block_forward(x, p),
            randomized(lambda r: E.init_mlp_block(r, small)),
            [(1, C, 4, 4)],
        ),
        "channel_mlp_block": (
            lambda p, x: E.channel_mlp_block_forward(x, p),
            randomized(lambda r: E.init_mlp_block(r, small)),
            [(1, C, 4, 4)],
        ),
        "lvc_forward": (lambda p, x: E.lvc_forward(x, p), randomized(lambda r: E.init_lvc(r, small)), [(1, C, 4, 4)]),
        "evc_forward": (
            lambda p, x: E.evc_forward(x, p),
            randomized(lambda r: E.init_evc_params(C, small, r)),
            [(1, C, 4, 4)],
        ),
        "cfp_forward": (
            cfp_block,
            randomized(lambda r: init_cfp_params({i: C for i in cfp_levels}, small, cfp_gcr, r)),
            cfp_shapes,
        ),
    }


def gradcheck_suite(evc_cfg=None, gcr_cfg=None, seeds=(0, 1, 2), tol=1e-3, h=1e-3, blocks=None) -> dict:
    """Grad-check every exported op and block; structure follows the given configs."""
    from .evc import EvcConfig

    cases = _suite_cases(evc_cfg or EvcConfig(), gcr_cfg or GcrConfig())
    if blocks:
        unknown = set(blocks) - set(cases)
        if unknown:
            raise ValueError(f"unknown blocks {sorted(unknown)}; choose from {sorted(cases)}")
        cases = {k: v for k, v in cases.items() if k in blocks}
    return {name: grad_check(block, make, shapes, seeds, tol, h) for name, (block, make, shapes) in cases.items()}
