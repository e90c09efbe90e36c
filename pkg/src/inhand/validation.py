"""Input validation helpers shared across the package."""

from __future__ import annotations

import numpy as np


class ValidationError(ValueError):
    """Raised when user-supplied data violates a documented contract."""


def as_float_array(x, name: str = "array") -> np.ndarray:
    """Coerce to a float64 ndarray and reject non-finite entries."""
    arr = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise ValidationError(f"{name} contains non-finite values")
    return arr


def check_vector(x, dim: int | None = None, name: str = "vector") -> np.ndarray:
    arr = as_float_array(x, name)
    if arr.ndim != 1:
        raise ValidationError(f"{name} must be 1-dimensional, got shape {arr.shape}")
    if dim is not None and arr.shape[0] != dim:
        raise ValidationError(f"{name} has dimension {arr.shape[0]}, expected {dim}")
    return arr


def check_positive(value: float, name: str) -> float:
    if not value > 0:
        raise ValidationError(f"{name} must be positive, got {value}")
    return float(value)


def check_unit_interval(value: float, name: str, open_ends: bool = True) -> float:
    ok = 0.0 < value < 1.0 if open_ends else 0.0 <= value <= 1.0
    if not ok:
        raise ValidationError(f"{name} must lie in (0, 1), got {value}")
    return float(value)
