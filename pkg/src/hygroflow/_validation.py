"""Input validation helpers shared across the package."""

from __future__ import annotations

import numpy as np


def check_grid(a, name: str = "grid") -> np.ndarray:
    """Validate a 2-D finite float field and return it as float64."""
    a = np.asarray(a)
    if a.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {a.shape}")
    if a.size == 0:
        raise ValueError(f"{name} must be non-empty")
    a = a.astype(np.float64, copy=False)
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name} contains non-finite values")
    return a


def check_mask(m, name: str = "mask") -> np.ndarray:
    """Validate a 2-D boolean mask."""
    m = np.asarray(m)
    if m.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {m.shape}")
    if m.dtype != np.bool_:
        if not np.isin(m, (0, 1)).all():
            raise ValueError(f"{name} must be boolean or 0/1 valued")
        m = m.astype(bool)
    return m


def check_same_shape(a, b, name_a: str = "a", name_b: str = "b") -> None:
    if np.shape(a) != np.shape(b):
        raise ValueError(
            f"{name_a} and {name_b} must share dimensions, "
            f"got {np.shape(a)} vs {np.shape(b)}")
