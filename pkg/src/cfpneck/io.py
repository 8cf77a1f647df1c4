"""On-disk formats: the ``CFT1`` tensor container, parameter bundles and run configs.

Tensor file layout (all little-endian)::

    magic   4 bytes  b"CFT1"
    dtype   u8       0 = float32
    ndim    u8
    dims    ndim x u32
    payload prod(dims) x 4 bytes, row-major
"""

from __future__ import annotations

import os
import struct
import tempfile
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Optional

import numpy as np

from . import params as P
from .evc import EvcConfig
from .gcr import GcrConfig
from .tensor import Tensor

MAGIC = b"CFT1"
DTYPE_F32 = 0
_HEADER = struct.Struct("<4sBB")
MANIFEST = "manifest.txt"


class TensorFileError(Exception):
    """Base class for container format problems."""

    code = "format"


class BadMagicError(TensorFileError):
    code = "bad_magic"


class TruncatedError(TensorFileError):
    code = "truncated"


class UnsupportedDtypeError(TensorFileError):
    code = "unsupported_dtype"


class ConfigError(ValueError):
    """Malformed or unknown configuration entry."""


def atomic_write_bytes(path, payload: bytes) -> None:
    """Write to a sibling temp file and rename, so readers never see a partial file."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent or ".")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def encode_tensor(t) -> bytes:
    arr = np.asarray(t.data if isinstance(t, Tensor) else t)
    if arr.ndim > 255:
        raise ValueError("too many dimensions for the container")
    header = _HEADER.pack(MAGIC, DTYPE_F32, arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape)
    return header + np.ascontiguousarray(arr, dtype="<f4").tobytes()


def decode_tensor(buf: bytes) -> Tensor:
    if len(buf) < _HEADER.size:
        if not MAGIC.startswith(buf[:4]):
            raise BadMagicError(f"bad magic {buf[:4]!r}")
        raise TruncatedError(f"header needs {_HEADER.size} bytes, got {len(buf)}")
    magic, dtype, ndim = _HEADER.unpack_from(buf)
    if magic != MAGIC:
        raise BadMagicError(f"bad magic {magic!r}")
    if dtype != DTYPE_F32:
        raise UnsupportedDtypeError(f"unsupported dtype code {dtype}")
    off = _HEADER.size
    if len(buf) < off + 4 * ndim:
        raise TruncatedError("truncated dims")
    dims = struct.unpack_from(f"<{ndim}I", buf, off)
    off += 4 * ndim
    need = 4 * int(np.prod(dims, dtype=np.int64))
    have = len(buf) - off
    if have < need:
        raise TruncatedError(f"payload has {have} bytes, expected {need}")
    if have > need:
        raise TensorFileError(f"payload has {have - need} trailing bytes")
    arr = np.frombuffer(buf, dtype="<f4", count=need // 4, offset=off).reshape(dims)
    return Tensor(arr.astype(np.float32))


def write_tensor(path, t) -> None:
    atomic_write_bytes(path, encode_tensor(t))


def read_tensor(path) -> Tensor:
    return decode_tensor(Path(path).read_bytes())


# ----------------------------------------------------------- param bundles


def save_params(directory, params) -> None:
    """One tensor file per parameter plus ``manifest.txt`` (``name<TAB>file``)."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    lines = []
    for name, t in P.named_tensors(params).items():
        fname = f"{name}.cft"
        write_tensor(d / fname, t)
        lines.append(f"{name}\t{fname}")
    atomic_write_bytes(d / MANIFEST, ("\n".join(lines) + "\n").encode())


def load_params(directory, template):
    """Fill ``template``'s structure with the tensors listed in the manifest."""
    d = Path(directory)
    values = {}
    for line in (d / MANIFEST).read_text().splitlines():
        if not line.strip():
            continue
        name, fname = line.split("\t")
        values[name] = read_tensor(d / fname)
    expected = set(P.named_tensors(template))
    if set(values) != expected:
        missing, extra = sorted(expected - set(values)), sorted(set(values) - expected)
        raise ConfigError(f"parameter bundle mismatch: missing={missing} extra={extra}")
    return P.replace_tensors(template, values)


# ------------------------------------------------------------------ config


@dataclass
class RunConfig:
    """Flat ``key=value`` run configuration; an empty file gives the defaults."""

    stem_channels: int = 256
    mlp_expansion: int = 4
    mlp_dconv_kernel: int = 1
    mlp_groupnorm_groups: int = 32
    lvc_codewords: int = 64
    gcr_levels: tuple = (3, 2)
    gcr_repeat: int = 1
    droppath: float = 0.0
    eps: float = 1e-5
    seed: int = 0
    mode: str = "eval"

    def __post_init__(self):
        if self.mode not in ("eval", "train"):
            raise ConfigError(f"mode must be eval or train, got {self.mode!r}")
        if self.seed < 0 or self.seed >= 2**64:
            raise ConfigError("seed must be an unsigned 64-bit integer")
        try:
            self.evc_config()
            self.gcr_config()
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    @property
    def training(self) -> bool:
        return self.mode == "train"

    def evc_config(self) -> EvcConfig:
        return EvcConfig(
            channels=self.stem_channels,
            expansion=self.mlp_expansion,
            dconv_kernel=self.mlp_dconv_kernel,
            groupnorm_groups=self.mlp_groupnorm_groups,
            codewords=self.lvc_codewords,
            droppath=self.droppath,
            eps=self.eps,
        )

    def gcr_config(self) -> GcrConfig:
        return GcrConfig(regulated_levels=self.gcr_levels, repeat=self.gcr_repeat)

    @staticmethod
    def key_of(field_name: str) -> str:
        return field_name.replace("_", ".", 1) if "_" in field_name and field_name.split("_")[0] in _SECTIONS else field_name

    @classmethod
    def from_text(cls, text: str) -> "RunConfig":
        by_key = {cls.key_of(f.name): f for f in fields(cls)}
        values = {}
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"line {lineno}: expected key=value, got {raw!r}")
            key, val = (s.strip() for s in line.split("=", 1))
            if key not in by_key:
                raise ConfigError(f"line {lineno}: unknown key {key!r}")
            f = by_key[key]
            if f.name in values:
                raise ConfigError(f"line {lineno}: duplicate key {key!r}")
            values[f.name] = _parse_value(f.name, val, lineno)
        return cls(**values)

    @classmethod
    def from_file(cls, path: Optional[str]) -> "RunConfig":
        if path is None:
            return cls()
        return cls.from_text(Path(path).read_text())

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, tuple):
                v = ",".join(map(str, v))
            lines.append(f"{self.key_of(f.name)}={v}")
        return "\n".join(lines) + "\n"


_SECTIONS = ("stem", "mlp", "lvc", "gcr")


def _parse_value(name: str, raw: str, lineno: int):
    try:
        if name == "gcr_levels":
            return tuple(int(s) for s in raw.split(",") if s.strip())
        if name in ("droppath", "eps"):
            return float(raw)
        if name == "mode":
            return raw
        return int(raw)
    except ValueError:
        raise ConfigError(f"line {lineno}: bad value {raw!r} for {name}") from None
