"""Input checks shared by the estimators and the CLI."""

from __future__ import annotations

import numbers

import numpy as np

from .gcr import Pyramid, PyramidError
from .tensor import NonFiniteError, Tensor


def check_feature_map(X, name: str = "X", dtype=np.float32) -> Tensor:
    """Coerce an array-like to a finite ``[B, C, H, W]`` tensor."""
    if isinstance(X, Tensor):
        arr = X.data
    else:
        arr = np.asarray(X)
    if arr.ndim == 3:
        arr = arr[None]
    if arr.ndim != 4:
        raise ValueError(f"{name} must be a [B, C, H, W] feature map, got shape {arr.shape}")
    if arr.size == 0:
        raise ValueError(f"{name} is empty")
    if not np.issubdtype(arr.dtype, np.number):
        raise TypeError(f"{name} must be numeric, got dtype {arr.dtype}")
    if not np.isfinite(arr).all():
        raise NonFiniteError(f"{name} contains NaN or Inf")
    if isinstance(X, Tensor) and X.dtype == dtype:
        return X
    return Tensor(arr, dtype=dtype)


def check_pyramid(X, dtype=np.float32) -> Pyramid:
    """Accept a :class:`Pyramid`, a ``{level: map}`` dict or a shallow-to-deep list."""
    if isinstance(X, Pyramid):
        return X
    if isinstance(X, dict):
        return Pyramid({int(k): check_feature_map(v, f"X[{k}]", dtype) for k, v in X.items()})
    if isinstance(X, (list, tuple)):
        if not X:
            raise PyramidError("empty pyramid")
        return Pyramid.from_list([check_feature_map(v, f"X[{i}]", dtype) for i, v in enumerate(X)])
    raise TypeError(f"expected a Pyramid, dict or list of feature maps, got {type(X).__name__}")


def check_random_state(seed) -> np.random.Generator:
    """``None`` / int / SeedSequence / Generator -> Generator."""
    if seed is None or isinstance(seed, (numbers.Integral, np.random.SeedSequence)):
        return np.random.default_rng(seed)
    if isinstance(seed, np.random.Generator):
        return seed
    raise ValueError(f"{seed!r} cannot be used to seed a numpy Generator")
