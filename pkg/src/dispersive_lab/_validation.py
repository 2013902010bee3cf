"""Small input-validation helpers shared across modules."""

import numpy as np


class RegimeError(ValueError):
    """A parameter falls outside the regime where a construction is valid."""


class InvariantViolation(RuntimeError):
    """A monitored invariant failed during a computation."""


def check_finite(arr, name="array"):
    arr = np.asarray(arr)
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite entries")
    return arr


def check_power_of_two(n, minimum=64):
    n = int(n)
    if n < minimum or n & (n - 1):
        raise ValueError(f"n_points must be a power of two >= {minimum}, got {n}")
    return n


def check_positive(x, name):
    if not (np.isfinite(x) and x > 0):
        raise ValueError(f"{name} must be positive and finite, got {x}")
    return float(x)


def check_same_grid(*fields):
    g = fields[0].grid
    for f in fields[1:]:
        if f.grid != g:
            raise ValueError("fields live on different grids")
    return g


def check_real(arr, name="array", tol=1e-12):
    arr = np.asarray(arr)
    if np.iscomplexobj(arr):
        scale = max(1.0, float(np.max(np.abs(arr))) if arr.size else 1.0)
        if np.max(np.abs(arr.imag), initial=0.0) > tol * scale:
            raise ValueError(f"{name} must be real-valued")
        arr = arr.real
    return arr
