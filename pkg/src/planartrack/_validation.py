"""Input validation helpers, loosely modelled on sklearn's check_array."""

from __future__ import annotations

import numpy as np


def as_points(x, *, name: str = "points") -> np.ndarray:
    """Coerce to a float (n, 2) array of finite planar points.

    Accepts a single (2,) point or anything array-like of shape (n, 2).
    """
    pts = np.asarray(x, dtype=float)
    if pts.ndim == 1:
        pts = pts.reshape(1, -1)
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise ValueError(f"{name} must have shape (n, 2), got {pts.shape}")
    if not np.all(np.isfinite(pts)):
        raise ValueError(f"{name} contains non-finite coordinates")
    return pts


def as_matrix(x, shape: tuple[int, int], *, name: str = "matrix") -> np.ndarray:
    m = np.asarray(x, dtype=float)
    if m.shape != shape:
        raise ValueError(f"{name} must have shape {shape}, got {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValueError(f"{name} contains non-finite entries")
    return m


def check_positive(value: float, *, name: str) -> float:
    value = float(value)
    if not np.isfinite(value) or value <= 0:
        raise ValueError(f"{name} must be a positive finite number, got {value}")
    return value


def check_probability(value: float, *, name: str, inclusive_top: bool = True) -> float:
    value = float(value)
    top_ok = value <= 1.0 if inclusive_top else value < 1.0
    if not (0.0 <= value and top_ok):
        raise ValueError(f"{name} must lie in the unit interval, got {value}")
    return value


def check_bbox(bbox) -> tuple[float, float, float, float]:
    """Validate an (left, top, width, height) box with positive extent."""
    left, top, w, h = (float(v) for v in bbox)
    if not all(np.isfinite(v) for v in (left, top, w, h)):
        raise ValueError(f"bbox has non-finite fields: {bbox}")
    if w <= 0 or h <= 0:
        raise ValueError(f"bbox width/height must be positive, got {bbox}")
    return (left, top, w, h)
