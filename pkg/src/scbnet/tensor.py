"""Rank-4 tensor conventions and compute precision.

Activations are plain ``numpy`` arrays laid out as (batch, channels, rows, cols).
Compute runs in float32; :func:`precision` switches the default to float64 for
tight gradient checks.
"""
from __future__ import annotations

import contextlib
from typing import Iterator

import numpy as np

from .errors import ShapeError

_DTYPE = np.dtype(np.float32)


def default_dtype() -> np.dtype:
    return _DTYPE


@contextlib.contextmanager
def precision(dtype) -> Iterator[np.dtype]:
    """Temporarily change the dtype used for new parameters and data."""
    global _DTYPE
    new = np.dtype(dtype)
    if new not in (np.dtype(np.float32), np.dtype(np.float64)):
        raise ValueError(f"unsupported precision {new}")
    old, _DTYPE = _DTYPE, new
    try:
        yield new
    finally:
        _DTYPE = old


def as_tensor4(x, *, name: str = "input") -> np.ndarray:
    """Validate ``x`` as a rank-4 tensor with all dimensions >= 1."""
    arr = np.asarray(x)
    if arr.ndim != 4:
        raise ShapeError(f"{name} must be rank 4 (n, c, h, w), got shape {arr.shape}")
    if min(arr.shape) < 1:
        raise ShapeError(f"{name} has an empty dimension: {arr.shape}")
    if arr.dtype not in (np.float32, np.float64):
        arr = arr.astype(_DTYPE)
    return arr


def check_finite(x: np.ndarray, what: str) -> None:
    if not np.all(np.isfinite(x)):
        raise FloatingPointError(f"non-finite values in {what}")
