"""Helpers for walking nested parameter dataclasses.

A parameter tree is any dataclass whose fields are :class:`Tensor`,
nested parameter dataclasses, lists/dicts of those, or plain scalars
(hyper-parameters, ignored here). Fields declared with
``metadata={"buffer": True}`` hold stored statistics rather than
trainable weights.
"""

from __future__ import annotations

import dataclasses
from typing import Callable, Iterator

import numpy as np

from .tensor import Tensor

BUFFER = {"buffer": True}
POSITIVE = {"positive": True}
POSITIVE_BUFFER = {"buffer": True, "positive": True}


def _walk(node, prefix: str, meta) -> Iterator[tuple]:
    if isinstance(node, Tensor):
        yield prefix, node, meta
    elif dataclasses.is_dataclass(node):
        for f in dataclasses.fields(node):
            child = getattr(node, f.name)
            yield from _walk(child, f"{prefix}.{f.name}" if prefix else f.name, f.metadata)
    elif isinstance(node, (list, tuple)):
        for i, child in enumerate(node):
            yield from _walk(child, f"{prefix}.{i}", meta)
    elif isinstance(node, dict):
        for k in sorted(node):
            yield from _walk(node[k], f"{prefix}.{k}", meta)


def named_tensors(params) -> dict:
    """Flat ``{dotted.name: Tensor}`` mapping in declaration order."""
    return {name: t for name, t, _ in _walk(params, "", {})}


def tensor_metadata(params) -> dict:
    return {name: dict(meta) for name, _, meta in _walk(params, "", {})}


def is_buffer(params, name: str) -> bool:
    return bool(tensor_metadata(params)[name].get("buffer"))


def map_tensors(params, fn: Callable):
    """Rebuild the tree with ``fn(name, tensor, metadata)`` applied to every tensor."""

    def rebuild(node, prefix, meta):
        if isinstance(node, Tensor):
            return fn(prefix, node, meta)
        if dataclasses.is_dataclass(node):
            changes = {}
            for f in dataclasses.fields(node):
                name = f"{prefix}.{f.name}" if prefix else f.name
                changes[f.name] = rebuild(getattr(node, f.name), name, f.metadata)
            return dataclasses.replace(node, **changes)
        if isinstance(node, list):
            return [rebuild(c, f"{prefix}.{i}", meta) for i, c in enumerate(node)]
        if isinstance(node, tuple):
            return tuple(rebuild(c, f"{prefix}.{i}", meta) for i, c in enumerate(node))
        if isinstance(node, dict):
            return {k: rebuild(node[k], f"{prefix}.{k}", meta) for k in node}
        return node

    return rebuild(params, "", {})


def replace_tensors(params, values: dict):
    """Swap in new tensors (or arrays) by dotted name; unknown names raise."""
    known = named_tensors(params)
    missing = set(values) - set(known)
    if missing:
        raise KeyError(f"unknown parameter names: {sorted(missing)}")

    def fn(name, t, meta):
        if name not in values:
            return t
        v = values[name]
        v = v if isinstance(v, Tensor) else Tensor(v, dtype=t.dtype)
        if v.shape != t.shape:
            raise ValueError(f"{name}: shape {v.shape} != {t.shape}")
        return v

    return map_tensors(params, fn)


def replacer(params, name: str) -> Callable:
    """``f(tensor) -> new tree`` that rebuilds only the path down to ``name``.

    Much cheaper than :func:`replace_tensors` when one tensor is swapped
    many times, as in finite differencing.
    """
    # top-level lists and dicts yield names with a leading dot
    parts = [k for k in name.split(".") if k]

    def get(node, key):
        if dataclasses.is_dataclass(node):
            return getattr(node, key)
        if isinstance(node, dict):
            return node[int(key)] if key.isdigit() and int(key) in node else node[key]
        return node[int(key)]

    def put(node, key, value):
        if dataclasses.is_dataclass(node):
            return dataclasses.replace(node, **{key: value})
        if isinstance(node, dict):
            k = int(key) if key.isdigit() and int(key) in node else key
            return {**node, k: value}
        items = list(node)
        items[int(key)] = value
        return type(node)(items)

    chain = [params]
    for key in parts[:-1]:
        chain.append(get(chain[-1], key))
    if not isinstance(get(chain[-1], parts[-1]), Tensor):
        raise KeyError(f"{name} is not a tensor")

    def swap(t: Tensor):
        value = t
        for node, key in zip(reversed(chain), reversed(parts)):
            value = put(node, key, value)
        return value

    return swap


def cast(params, dtype):
    return map_tensors(params, lambda name, t, meta: t.astype(dtype))


def watch(params, tape):
    """Alias every tensor in the tree onto ``tape``."""
    return map_tensors(params, lambda name, t, meta: tape.watch(t))


def randomize(params, rng: np.random.Generator, dtype=np.float64):
    """Random values for verification.

    Positive fields draw from U(0.5, 1.5); weight arrays (ndim >= 2) from
    N(0, 1/fan_in) so activations keep unit scale; vectors from N(0, 0.5^2).
    """

    def fn(name, t, meta):
        if meta.get("positive"):
            v = rng.uniform(0.5, 1.5, size=t.shape)
        elif t.ndim >= 2:
            fan_in = int(np.prod(t.shape[1:]))
            v = rng.normal(0.0, 1.0 / np.sqrt(fan_in), size=t.shape)
        else:
            v = rng.normal(0.0, 0.5, size=t.shape)
        return Tensor(v, dtype=dtype)

    return map_tensors(params, fn)
