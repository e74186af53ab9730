"""Small input-validation helpers shared by the estimators and the CLI."""

from __future__ import annotations

import numbers

import numpy as np


def check_positive_int(value, name: str) -> int:
    if isinstance(value, bool) or not isinstance(value, numbers.Integral):
        raise TypeError(f"{name} must be an integer, got {type(value).__name__}")
    if value < 1:
        raise ValueError(f"{name} must be a positive integer, got {value}")
    return int(value)


def check_scalar(value, name: str, *, low=None, high=None, low_inclusive=True,
                 high_inclusive=True) -> float:
    """Validate a finite real scalar against optional bounds."""
    if isinstance(value, bool) or not isinstance(value, numbers.Real):
        raise TypeError(f"{name} must be a real number, got {type(value).__name__}")
    value = float(value)
    if not np.isfinite(value):
        raise ValueError(f"{name} must be finite, got {value}")
    if low is not None:
        if value < low or (value == low and not low_inclusive):
            op = ">=" if low_inclusive else ">"
            raise ValueError(f"{name} must be {op} {low}, got {value}")
    if high is not None:
        if value > high or (value == high and not high_inclusive):
            op = "<=" if high_inclusive else "<"
            raise ValueError(f"{name} must be {op} {high}, got {value}")
    return value


def check_finite_array(x, name: str, ndim: int | None = None) -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64)
    if ndim is not None and arr.ndim != ndim:
        raise ValueError(f"{name} must be {ndim}-dimensional, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    return arr


def check_weights(weights, n: int) -> np.ndarray:
    """Return per-step weights (default all ones), validated positive."""
    if weights is None:
        return np.ones(n)
    w = check_finite_array(weights, "weights", ndim=1)
    if w.shape[0] != n:
        raise ValueError(f"weights must have length {n}, got {w.shape[0]}")
    if np.any(w <= 0):
        raise ValueError("weights must be strictly positive")
    return w


def check_grid(values, name: str) -> np.ndarray:
    arr = check_finite_array(values, name, ndim=1)
    if arr.size == 0:
        raise ValueError(f"{name} must be nonempty")
    if np.any(arr <= 0):
        raise ValueError(f"{name} entries must be > 0")
    return arr
