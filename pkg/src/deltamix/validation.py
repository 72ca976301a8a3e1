"""Input validation helpers.

All public entry points funnel array arguments through these so that shape
and finiteness problems surface as :class:`~deltamix.exceptions.ShapeError`
with a readable message instead of a numpy broadcast failure deep inside.
"""

from __future__ import annotations

import numpy as np

from .exceptions import ConfigError, ShapeError


def as_matrix(x, name: str = "matrix") -> np.ndarray:
    """Coerce to a finite 2-D float64 C-order array (widening 16/32-bit input)."""
    a = np.asarray(x, dtype=np.float64)
    if a.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got shape {a.shape}")
    if a.shape[0] < 1 or a.shape[1] < 1:
        raise ShapeError(f"{name} must have at least one row and column, got {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ShapeError(f"{name} contains non-finite entries")
    return np.ascontiguousarray(a)


def as_vector(x, name: str = "vector") -> np.ndarray:
    """Coerce to a finite 1-D float64 array."""
    a = np.asarray(x, dtype=np.float64).ravel()
    if a.size < 1:
        raise ShapeError(f"{name} must be non-empty")
    if not np.all(np.isfinite(a)):
        raise ShapeError(f"{name} contains non-finite entries")
    return a


def check_square(a: np.ndarray, name: str = "matrix") -> np.ndarray:
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ShapeError(f"{name} must be square, got shape {a.shape}")
    return a


def check_symmetric(a: np.ndarray, name: str = "matrix", rel_tol: float = 1e-10) -> np.ndarray:
    check_square(a, name)
    scale = max(1.0, float(np.max(np.abs(a))))
    if float(np.max(np.abs(a - a.T))) > rel_tol * scale:
        raise ShapeError(f"{name} is not symmetric within {rel_tol:g} relative")
    return a


def check_candidate_bits(bits) -> tuple[int, ...]:
    """Validate a candidate bit list: unique ascending ints, each 0 or in [2, 16]."""
    try:
        q = tuple(int(b) for b in bits)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"candidate bits must be integers, got {bits!r}") from exc
    if not q:
        raise ConfigError("candidate bit list must be non-empty")
    if len(set(q)) != len(q) or list(q) != sorted(q):
        raise ConfigError(f"candidate bits must be unique and ascending, got {q}")
    for b in q:
        if b != 0 and not 2 <= b <= 16:
            raise ConfigError(f"unsupported candidate bit width {b} (must be 0 or 2..16)")
    return q
