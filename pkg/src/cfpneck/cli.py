"""``cfp`` command line: gen, forward, stats, gradcheck, bench.

Exit codes: 0 success, 1 usage, 2 I/O or format, 3 numeric failure.
Failures print one line to stderr::

    error: code=2 kind=bad_magic message="bad magic b'XXXX'"
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from pathlib import Path

import numpy as np

from . import analysis
from .evc import evc_forward
from .gcr import Pyramid, PyramidError, cfp_forward, init_cfp_params
from .io import (
    ConfigError,
    RunConfig,
    TensorFileError,
    atomic_write_bytes,
    encode_tensor,
    load_params,
    read_tensor,
    save_params,
)
from .tensor import NonFiniteError, ShapeError, Tensor

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_NUMERIC = 0, 1, 2, 3


class CliError(Exception):
    def __init__(self, code: int, kind: str, message: str):
        super().__init__(message)
        self.code, self.kind = code, kind


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CliError(EXIT_USAGE, "usage", message)


def _shape(text: str) -> tuple:
    try:
        shape = tuple(int(s) for s in text.split(","))
    except ValueError:
        raise CliError(EXIT_USAGE, "usage", f"bad shape {text!r}") from None
    if not shape or any(d < 1 for d in shape):
        raise CliError(EXIT_USAGE, "usage", f"bad shape {text!r}")
    return shape


def _shapes(values) -> list:
    out = []
    for v in values or []:
        out += [_shape(s) for s in v.split(";") if s.strip()]
    return out


def _rngs(seed: int):
    """Independent streams for parameter init and train-mode sampling."""
    init, sample = np.random.SeedSequence(seed).spawn(2)
    return np.random.default_rng(init), np.random.default_rng(sample)


def build_params(cfg: RunConfig, level_channels: dict, params_dir=None):
    init_rng, _ = _rngs(cfg.seed)
    params = init_cfp_params(level_channels, cfg.evc_config(), cfg.gcr_config(), init_rng)
    if params_dir is not None:
        params = load_params(params_dir, params)
    return params


def _digest(t: Tensor) -> str:
    return hashlib.sha256(encode_tensor(t)).hexdigest()


# -------------------------------------------------------------- commands


def cmd_gen(args) -> int:
    shape = _shape(args.shape)
    rng = np.random.default_rng(args.seed)
    atomic_write_bytes(args.out, encode_tensor(Tensor(rng.standard_normal(shape, dtype=np.float32))))
    return EXIT_OK


def cmd_forward(args) -> int:
    cfg = RunConfig.from_file(args.config)
    paths = [p for p in args.inputs.split(",") if p]
    if not paths:
        raise CliError(EXIT_USAGE, "usage", "--inputs needs at least one file")
    maps = [read_tensor(p) for p in paths]
    pyr = Pyramid.from_list(maps)
    params = build_params(cfg, {i: t.shape[1] for i, t in pyr.levels.items()}, args.params)
    _, sample_rng = _rngs(cfg.seed)
    out = cfp_forward(pyr, params, cfg.gcr_config(), training=cfg.training, rng=sample_rng)

    # everything is computed before the first byte is written
    files = {f"X{i}.cft": encode_tensor(t) for i, t in out.levels.items()}
    summary = {
        "config": cfg.to_text().strip().splitlines(),
        "inputs": {f"X{i}": list(t.shape) for i, t in pyr.levels.items()},
        "outputs": {
            f"X{i}": {
                "shape": list(t.shape),
                "mean": float(np.mean(t.data, dtype=np.float64)),
                "std": float(np.std(t.data, dtype=np.float64)),
                "sha256": _digest(t),
            }
            for i, t in out.levels.items()
        },
    }
    text = [f"mode: {cfg.mode}", f"seed: {cfg.seed}", "outputs:"]
    for name, o in summary["outputs"].items():
        text.append(f"  {name}:")
        text.append(f"    shape: {','.join(map(str, o['shape']))}")
        text.append(f"    mean: {o['mean']:.9g}")
        text.append(f"    std: {o['std']:.9g}")
        text.append(f"    sha256: {o['sha256']}")
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for name, payload in files.items():
        atomic_write_bytes(out_dir / name, payload)
    atomic_write_bytes(out_dir / "summary.txt", ("\n".join(text) + "\n").encode())
    atomic_write_bytes(out_dir / "summary.json", (json.dumps(summary, indent=2, sort_keys=True) + "\n").encode())
    if args.save_params:
        save_params(args.save_params, params)
    print("\n".join(text))
    return EXIT_OK


def cmd_stats(args) -> int:
    cfg = RunConfig.from_file(args.config)
    shapes = _shapes(args.input_shape) or [(1, 256, 32, 32), (1, 512, 16, 16), (1, 1024, 8, 8)]
    init_rng, _ = _rngs(cfg.seed)
    if len(shapes) == 1:
        from .evc import init_evc_params

        params = init_evc_params(shapes[0][1], cfg.evc_config(), init_rng)
        report = analysis.cost_report(params, shapes[0])
    else:
        first = 5 - len(shapes)
        if first < 0:
            raise CliError(EXIT_USAGE, "usage", "at most five pyramid levels")
        level_shapes = {first + k: s for k, s in enumerate(shapes)}
        params = init_cfp_params({i: s[1] for i, s in level_shapes.items()}, cfg.evc_config(), cfg.gcr_config(), init_rng)
        report = analysis.cost_report(params, level_shapes, cfg.gcr_config())
    if args.json:
        print(json.dumps(report.to_dict(), indent=2))
    else:
        sys.stdout.write(report.to_text())
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    cfg = RunConfig.from_file(args.config)
    seeds = tuple(int(s) for s in args.seeds.split(","))
    reports = analysis.gradcheck_suite(cfg.evc_config(), cfg.gcr_config(), seeds=seeds, blocks=args.block)
    ok = True
    for name, rep in reports.items():
        status = "pass" if rep.passed else "FAIL"
        print(f"{name}: {status} max_rel_error={rep.max_rel_error:.3e} coordinates={rep.checked} kinks={rep.kinks}")
        for e in rep.failures:
            print(f"  {e.name}: rel_error={e.max_rel_error:.3e} index={list(e.index)} seed={e.seed}")
        ok &= rep.passed
    if not ok:
        raise CliError(EXIT_NUMERIC, "gradcheck_failed", "gradient check failed")
    return EXIT_OK


def cmd_bench(args) -> int:
    cfg = RunConfig.from_file(args.config)
    shape = _shape(args.input_shape)
    init_rng, sample_rng = _rngs(cfg.seed)
    from .evc import init_evc_params

    params = init_evc_params(shape[1], cfg.evc_config(), init_rng)
    x = Tensor(sample_rng.standard_normal(shape, dtype=np.float32))
    stats = analysis.bench_latency(lambda t: evc_forward(t, params), x, warmup=args.warmup, iters=args.iters)
    sys.stdout.write(f"block: evc\ninput_shape: {args.input_shape}\n" + stats.to_text())
    return EXIT_OK


def make_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="cfp", description="Centralized feature pyramid neck tools")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen", help="write a seeded standard-normal tensor file")
    g.add_argument("--shape", required=True, help="comma list, e.g. 1,256,32,32")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen)

    f = sub.add_parser("forward", help="run the neck on a pyramid of tensor files")
    f.add_argument("--config")
    f.add_argument("--inputs", required=True, help="comma list of files, shallow to deep, ending at level 4")
    f.add_argument("--out-dir", required=True)
    f.add_argument("--params", help="parameter bundle directory to load instead of seeded init")
    f.add_argument("--save-params", help="write the parameters used to this directory")
    f.set_defaults(func=cmd_forward)

    s = sub.add_parser("stats", help="parameter and FLOP accounting")
    s.add_argument("--config")
    s.add_argument(
        "--input-shape",
        action="append",
        help="one shape for a single EVC block, or several (repeat flag or ';'-separate) for a pyramid",
    )
    s.add_argument("--json", action="store_true")
    s.set_defaults(func=cmd_stats)

    c = sub.add_parser("gradcheck", help="finite-difference gradient suite at small scale")
    c.add_argument("--config")
    c.add_argument("--seeds", default="0,1,2")
    c.add_argument("--block", action="append", help="restrict to named blocks (repeatable)")
    c.set_defaults(func=cmd_gradcheck)

    b = sub.add_parser("bench", help="forward latency of one EVC block")
    b.add_argument("--config")
    b.add_argument("--input-shape", default="1,1024,8,8")
    b.add_argument("--iters", type=int, default=20)
    b.add_argument("--warmup", type=int, default=3)
    b.set_defaults(func=cmd_bench)
    return p


def _classify(exc: BaseException) -> tuple:
    if isinstance(exc, CliError):
        return exc.code, exc.kind
    if isinstance(exc, TensorFileError):
        return EXIT_IO, exc.code
    if isinstance(exc, ConfigError):
        return EXIT_IO, "config"
    if isinstance(exc, (FileNotFoundError, IsADirectoryError, PermissionError)):
        return EXIT_IO, "io"
    if isinstance(exc, OSError):
        return EXIT_IO, "io"
    if isinstance(exc, (NonFiniteError, FloatingPointError)):
        return EXIT_NUMERIC, "non_finite"
    if isinstance(exc, (PyramidError, ShapeError)):
        return EXIT_IO, "shape"
    if isinstance(exc, ValueError):
        return EXIT_USAGE, "value"
    raise exc


def main(argv=None) -> int:
    try:
        args = make_parser().parse_args(argv)
        if getattr(args, "iters", 1) < 1:
            raise CliError(EXIT_USAGE, "usage", "--iters must be >= 1")
        return args.func(args)
    except Exception as exc:  # noqa: BLE001 - every failure maps to an exit code
        code, kind = _classify(exc)
        print(f"error: code={code} kind={kind} message={json.dumps(str(exc))}", file=sys.stderr)
        return code


if __name__ == "__main__":
    sys.exit(main())
