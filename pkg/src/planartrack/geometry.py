"""Planar homographies and radial lens distortion.

Coordinates are plain float arrays of shape (n, 2). The two learned objects,
:class:`Homography` and :class:`DistortionModel`, are immutable value types
that serialize into the calibration JSON; :class:`HomographyEstimator` and
:class:`DistortionEstimator` wrap the fitting routines in the usual
fit/transform estimator surface.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.optimize import minimize
from sklearn.base import BaseEstimator, TransformerMixin

from . import errors
from ._io import atomic_write_text
from ._validation import as_matrix, as_points, check_positive


class Homography:
    """Invertible 3x3 projective map, normalized so m[2,2] = 1 when possible."""

    def __init__(self, matrix):
        m = as_matrix(matrix, (3, 3), name="homography")
        if abs(np.linalg.det(m)) < 1e-15:
            raise errors.SingularMatrix("homography determinant is zero")
        if m[2, 2] != 0:
            m = m / m[2, 2]
        m.flags.writeable = False
        self.matrix = m

    @classmethod
    def identity(cls) -> "Homography":
        return cls(np.eye(3))

    def apply(self, points) -> np.ndarray:
        """Map (n, 2) points through the homography.

        Raises PointAtInfinity when the homogeneous scale of any output
        vanishes (|w| < 1e-12).
        """
        pts = as_points(points)
        hom = np.hstack([pts, np.ones((len(pts), 1))]) @ self.matrix.T
        w = hom[:, 2]
        if np.any(np.abs(w) < 1e-12):
            raise errors.PointAtInfinity("homogeneous scale vanished")
        return hom[:, :2] / w[:, None]

    def apply_point(self, x: float, y: float) -> tuple[float, float]:
        out = self.apply([[x, y]])[0]
        return float(out[0]), float(out[1])

    def inverse(self) -> "Homography":
        return Homography(np.linalg.inv(self.matrix))

    def __matmul__(self, other: "Homography") -> "Homography":
        return Homography(self.matrix @ other.matrix)

    def __repr__(self) -> str:
        return f"Homography({self.matrix.tolist()!r})"


def _hartley_normalization(pts: np.ndarray) -> np.ndarray:
    """Similarity transform taking pts to centroid 0, mean radius sqrt(2)."""
    centroid = pts.mean(axis=0)
    mean_dist = np.mean(np.linalg.norm(pts - centroid, axis=1))
    scale = np.sqrt(2.0) / mean_dist if mean_dist > 0 else 1.0
    return np.array([
        [scale, 0.0, -scale * centroid[0]],
        [0.0, scale, -scale * centroid[1]],
        [0.0, 0.0, 1.0],
    ])


def estimate_homography(src, dst) -> Homography:
    """Least-squares homography from >= 4 point correspondences (DLT).

    Coordinates are Hartley-normalized, the stacked 2n x 9 system is solved
    by SVD (null space = smallest singular direction), and the result is
    denormalized. Raises TooFewPairs or DegenerateConfiguration.
    """
    src = as_points(src, name="src")
    dst = as_points(dst, name="dst")
    if len(src) != len(dst):
        raise ValueError("src and dst must have equal length")
    if len(src) < 4:
        raise errors.TooFewPairs(f"need >= 4 correspondences, got {len(src)}")

    t_src = _hartley_normalization(src)
    t_dst = _hartley_normalization(dst)
    s = np.hstack([src, np.ones((len(src), 1))]) @ t_src.T
    d = np.hstack([dst, np.ones((len(dst), 1))]) @ t_dst.T

    a = np.zeros((2 * len(src), 9))
    for i, ((sx, sy, _), (dx, dy, _)) in enumerate(zip(s, d)):
        a[2 * i] = [sx, sy, 1, 0, 0, 0, -dx * sx, -dx * sy, -dx]
        a[2 * i + 1] = [0, 0, 0, sx, sy, 1, -dy * sx, -dy * sy, -dy]

    _, sing, vt = np.linalg.svd(a)
    # rank < 8 means a whole family of homographies fits: degenerate input
    if sing[0] <= 0 or (len(sing) >= 8 and sing[7] / sing[0] < 1e-10):
        raise errors.DegenerateConfiguration("correspondences are rank deficient")
    h_norm = vt[-1].reshape(3, 3)
    h = np.linalg.inv(t_dst) @ h_norm @ t_src
    if abs(np.linalg.det(h)) < 1e-15:
        raise errors.DegenerateConfiguration("estimated homography is singular")
    return Homography(h)


def reprojection_rms(h: Homography, src, dst) -> float:
    """Root mean square distance between h(src) and dst."""
    src = as_points(src, name="src")
    dst = as_points(dst, name="dst")
    mapped = h.apply(src)
    return float(np.sqrt(np.mean(np.sum((mapped - dst) ** 2, axis=1))))


class HomographyEstimator(BaseEstimator, TransformerMixin):
    """Estimator wrapper around the DLT fit.

    fit(X, Y) learns the map X -> Y; transform applies it and
    inverse_transform applies its inverse.
    """

    def fit(self, X, Y):
        X = as_points(X, name="X")
        Y = as_points(Y, name="Y")
        self.homography_ = estimate_homography(X, Y)
        self.rms_ = reprojection_rms(self.homography_, X, Y)
        return self

    def transform(self, X) -> np.ndarray:
        return self.homography_.apply(X)

    def inverse_transform(self, X) -> np.ndarray:
        return self.homography_.inverse().apply(X)

    def score(self, X, Y) -> float:
        """Negative reprojection RMS, so larger is better."""
        return -reprojection_rms(self.homography_, X, Y)


# ---------------------------------------------------------------------------
# radial distortion


@dataclass(frozen=True)
class DistortionModel:
    """Two-coefficient radial model around a fixed center.

    Forward (distort) in normalized coordinates x_n = (p - center) / scale:
    r_d = r_u * (1 + k1 * r_u^2 + k2 * r_u^4). The inverse is found by
    Newton iteration per point.
    """

    k1: float = 0.0
    k2: float = 0.0
    center: tuple[float, float] = (0.0, 0.0)
    scale: float = 1.0

    def __post_init__(self):
        check_positive(self.scale, name="scale")

    @classmethod
    def identity(cls, center=(0.0, 0.0), scale=1.0) -> "DistortionModel":
        return cls(0.0, 0.0, (float(center[0]), float(center[1])), float(scale))

    def is_monotone(self, r_max: float = 1.5, samples: int = 512) -> bool:
        """True when r * (1 + k1 r^2 + k2 r^4) is strictly increasing on [0, r_max]."""
        r = np.linspace(0.0, r_max, samples)
        fwd = r * (1.0 + self.k1 * r**2 + self.k2 * r**4)
        return bool(np.all(np.diff(fwd) > 0))

    def _radial_forward(self, r: np.ndarray) -> np.ndarray:
        return r * (1.0 + self.k1 * r**2 + self.k2 * r**4)

    def distort(self, points) -> np.ndarray:
        """Map undistorted points to distorted (observed) positions."""
        pts = as_points(points)
        normed = (pts - np.asarray(self.center)) / self.scale
        r_u = np.linalg.norm(normed, axis=1)
        factor = 1.0 + self.k1 * r_u**2 + self.k2 * r_u**4
        return normed * factor[:, None] * self.scale + np.asarray(self.center)

    def undistort(self, points, max_iter: int = 20, tol: float = 1e-10) -> np.ndarray:
        """Invert the radial map by Newton iteration.

        Raises NonConvergence when |delta r| stays above tol after max_iter
        steps, which signals a non-monotone model at that radius.
        """
        pts = as_points(points)
        normed = (pts - np.asarray(self.center)) / self.scale
        r_d = np.linalg.norm(normed, axis=1)
        r_u = r_d.copy()
        converged = r_d == 0.0
        for _ in range(max_iter):
            if np.all(converged):
                break
            f = r_u * (1.0 + self.k1 * r_u**2 + self.k2 * r_u**4) - r_d
            df = 1.0 + 3.0 * self.k1 * r_u**2 + 5.0 * self.k2 * r_u**4
            if np.any(np.abs(df[~converged]) < 1e-14):
                raise errors.NonConvergence("zero derivative in radial inversion")
            step = np.where(converged, 0.0, f / df)
            r_u = r_u - step
            converged |= np.abs(step) < tol
        if not np.all(converged):
            raise errors.NonConvergence("radial inversion did not converge")
        with np.errstate(invalid="ignore", divide="ignore"):
            ratio = np.where(r_d > 0, r_u / r_d, 1.0)
        return normed * ratio[:, None] * self.scale + np.asarray(self.center)

    def to_json_dict(self) -> dict:
        return {
            "k1": self.k1,
            "k2": self.k2,
            "center": [self.center[0], self.center[1]],
            "scale": self.scale,
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "DistortionModel":
        return cls(
            k1=float(d["k1"]),
            k2=float(d["k2"]),
            center=(float(d["center"][0]), float(d["center"][1])),
            scale=float(d["scale"]),
        )


@dataclass(frozen=True)
class Polyline:
    """Ordered point chain traced along a physically straight structure."""

    points: np.ndarray
    label: str = ""

    def __post_init__(self):
        pts = as_points(self.points, name="polyline")
        if len(pts) < 3:
            raise ValueError("polyline needs at least 3 points")
        if np.any(np.all(np.diff(pts, axis=0) == 0, axis=1)):
            raise ValueError("polyline has repeated consecutive points")
        object.__setattr__(self, "points", pts)


def straightness_residual(points) -> float:
    """Sum of squared perpendicular distances to the total-least-squares line.

    The TLS line through the centroid along the dominant eigenvector of the
    2x2 scatter matrix leaves exactly the smallest eigenvalue as residual.
    """
    pts = as_points(points)
    if len(pts) < 3:
        raise ValueError("need at least 3 points")
    centered = pts - pts.mean(axis=0)
    scatter = centered.T @ centered
    eigvals = np.linalg.eigvalsh(scatter)
    return float(max(eigvals[0], 0.0))


def _total_residual(lines: list[Polyline], model: DistortionModel) -> float:
    return sum(straightness_residual(model.undistort(line.points)) for line in lines)


def estimate_distortion(
    lines: list[Polyline],
    center,
    scale: float,
    k1_range: tuple[float, float] = (-0.5, 0.5),
    k2_range: tuple[float, float] = (-0.2, 0.2),
    grid: int = 21,
) -> tuple[DistortionModel, float]:
    """Fit (k1, k2) so that undistorted lines become straight.

    Coarse grid search over the coefficient box followed by Nelder-Mead
    refinement; the returned objective is guaranteed <= the best coarse
    grid point. Returns (model, residual).
    """
    if len(lines) < 2:
        raise errors.InsufficientLines(f"need >= 2 polylines, got {len(lines)}")
    scale = check_positive(scale, name="scale")
    center = (float(center[0]), float(center[1]))

    # lines through the center stay straight under any radial map
    c = np.asarray(center)
    radial_tol = 1e-6 * scale
    def passes_through_center(line: Polyline) -> bool:
        pts = line.points
        centered = pts - pts.mean(axis=0)
        scatter = centered.T @ centered
        _, vecs = np.linalg.eigh(scatter)
        direction = vecs[:, -1]
        normal = np.array([-direction[1], direction[0]])
        return abs(float(np.dot(c - pts.mean(axis=0), normal))) < radial_tol

    if all(passes_through_center(line) for line in lines):
        raise errors.DegenerateGeometry("all lines pass through the center")

    def objective(k: np.ndarray) -> float:
        model = DistortionModel(float(k[0]), float(k[1]), center, scale)
        try:
            return _total_residual(lines, model)
        except errors.NonConvergence:
            return np.inf

    k1_grid = np.linspace(k1_range[0], k1_range[1], grid)
    k2_grid = np.linspace(k2_range[0], k2_range[1], grid)
    best_val = np.inf
    best_k = np.zeros(2)
    for k1 in k1_grid:
        for k2 in k2_grid:
            val = objective(np.array([k1, k2]))
            if val < best_val:
                best_val = val
                best_k = np.array([k1, k2])

    result = minimize(
        objective,
        best_k,
        method="Nelder-Mead",
        options={"xatol": 1e-6, "fatol": 1e-12, "maxiter": 2000},
    )
    k_opt, val_opt = (result.x, float(result.fun)) if result.fun <= best_val else (best_k, best_val)
    model = DistortionModel(float(k_opt[0]), float(k_opt[1]), center, scale)
    return model, val_opt


class DistortionEstimator(BaseEstimator, TransformerMixin):
    """Estimator wrapper: fit on polylines, transform undistorts points."""

    def __init__(self, center=(0.0, 0.0), scale=1.0,
                 k1_range=(-0.5, 0.5), k2_range=(-0.2, 0.2), grid=21):
        self.center = center
        self.scale = scale
        self.k1_range = k1_range
        self.k2_range = k2_range
        self.grid = grid

    def fit(self, lines: list[Polyline], y=None):
        self.model_, self.residual_ = estimate_distortion(
            lines, self.center, self.scale,
            k1_range=tuple(self.k1_range), k2_range=tuple(self.k2_range),
            grid=self.grid,
        )
        return self

    def transform(self, X) -> np.ndarray:
        return self.model_.undistort(X)

    def inverse_transform(self, X) -> np.ndarray:
        return self.model_.distort(X)


# ---------------------------------------------------------------------------
# file formats


def read_correspondences(path) -> tuple[np.ndarray, np.ndarray]:
    """Read `src_x,src_y,dst_x,dst_y` CSV; `#` starts a comment line."""
    src, dst = [], []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split(",")
            if len(parts) != 4:
                raise errors.ParseError(
                    f"expected 4 fields, got {len(parts)}", line=lineno)
            try:
                vals = [float(p) for p in parts]
            except ValueError as exc:
                raise errors.ParseError(str(exc), line=lineno) from exc
            src.append(vals[:2])
            dst.append(vals[2:])
    return np.array(src, dtype=float).reshape(-1, 2), np.array(dst, dtype=float).reshape(-1, 2)


def read_polylines(path) -> list[Polyline]:
    """Read a JSON array of {"label": str, "points": [[x, y], ...]}."""
    with open(path, "r", encoding="utf-8") as fh:
        data = json.load(fh)
    if not isinstance(data, list):
        raise errors.ParseError("polyline file must contain a JSON array")
    return [Polyline(points=np.asarray(item["points"], dtype=float),
                     label=str(item.get("label", ""))) for item in data]


def write_calibration(path, camera_id: str, h: Homography,
                      distortion: DistortionModel, rms: float) -> None:
    doc = {
        "camera_id": camera_id,
        "H": h.matrix.tolist(),
        "distortion": distortion.to_json_dict(),
        "rms": float(rms),
    }
    atomic_write_text(path, json.dumps(doc, indent=2, sort_keys=True) + "\n")


def read_calibration(path) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    return {
        "camera_id": str(doc["camera_id"]),
        "H": Homography(np.asarray(doc["H"], dtype=float)),
        "distortion": DistortionModel.from_json_dict(doc["distortion"]),
        "rms": float(doc["rms"]),
    }
