"""Independent reference implementations used to freeze expected values.

Everything here is deliberately brute force (rasterized counting, factorial
enumeration, dense grids) and shares no code with the package paths it
checks.
"""

from __future__ import annotations

import itertools
import math

import numpy as np


def grid_iou(box_a, box_b, extent: int = 64) -> float:
    """IoU by counting integer grid cells covered by each box."""
    def cells(box):
        left, top, w, h = box
        out = set()
        for col in range(extent):
            for row in range(extent):
                cx, cy = col + 0.5, row + 0.5
                if left <= cx < left + w and top <= cy < top + h:
                    out.add((col, row))
        return out

    a = cells(box_a)
    b = cells(box_b)
    union = a | b
    if not union:
        return 0.0
    return len(a & b) / len(union)


def brute_force_assignment(cost: np.ndarray, pad_value: float) -> float:
    """Minimum total cost over all permutations of the padded square matrix."""
    cost = np.asarray(cost, dtype=float)
    n_rows, n_cols = cost.shape
    k = max(n_rows, n_cols)
    padded = np.full((k, k), pad_value)
    padded[:n_rows, :n_cols] = cost
    best = math.inf
    for perm in itertools.permutations(range(k)):
        total = sum(padded[i, perm[i]] for i in range(k))
        if total < best:
            best = total
    return best


def brute_force_idf1(overlap: np.ndarray, len_gt, len_hyp) -> float:
    """IDF1 maximized over every injective partial gt -> hyp mapping."""
    n_g, n_h = overlap.shape
    total_gt = int(sum(len_gt))
    total_hyp = int(sum(len_hyp))
    best_idtp = 0
    hyp_indices = list(range(n_h))
    for size in range(0, min(n_g, n_h) + 1):
        for gt_subset in itertools.combinations(range(n_g), size):
            for hyp_perm in itertools.permutations(hyp_indices, size):
                idtp = sum(overlap[g, h] for g, h in zip(gt_subset, hyp_perm))
                best_idtp = max(best_idtp, int(idtp))
    denom = total_gt + total_hyp
    return 2.0 * best_idtp / denom if denom else 0.0


def bilinear_oracle(image: np.ndarray, x: float, y: float) -> float:
    """Direct four-neighbour bilinear formula with edge clamping."""
    h, w = image.shape[:2]
    x0 = min(max(int(math.floor(x)), 0), w - 1)
    y0 = min(max(int(math.floor(y)), 0), h - 1)
    x1 = min(x0 + 1, w - 1)
    y1 = min(y0 + 1, h - 1)
    fx = min(max(x - x0, 0.0), 1.0)
    fy = min(max(y - y0, 0.0), 1.0)
    top = image[y0, x0] * (1 - fx) + image[y0, x1] * fx
    bot = image[y1, x0] * (1 - fx) + image[y1, x1] * fx
    return float(top * (1 - fy) + bot * fy)


def line_residual_bruteforce(points, coarse: int = 3600, refine: int = 400) -> float:
    """Best sum of squared perpendicular distances over line angle/offset.

    For a fixed normal direction the optimal offset is the mean projection,
    so only the angle needs searching; a fine local pass tightens the
    coarse optimum.
    """
    pts = np.asarray(points, dtype=float)

    def residual(theta: float) -> float:
        normal = np.array([-math.sin(theta), math.cos(theta)])
        proj = pts @ normal
        return float(np.sum((proj - proj.mean()) ** 2))

    thetas = np.linspace(0.0, math.pi, coarse, endpoint=False)
    vals = [residual(t) for t in thetas]
    best_i = int(np.argmin(vals))
    lo = thetas[best_i] - math.pi / coarse
    hi = thetas[best_i] + math.pi / coarse
    fine = np.linspace(lo, hi, refine)
    return min(residual(t) for t in fine)
