"""Minimum-cost bipartite assignment (Hungarian algorithm).

The solver is the O(n^3) shortest-augmenting-path formulation with row and
column potentials. All comparisons are strict and columns are scanned in
index order, so equal-cost solutions resolve to the lowest
(row_index, col_index) choices and results are bit-stable across runs.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = ["Assignment", "solve_square", "hungarian_assign"]

_INF = float("inf")


def solve_square(cost: np.ndarray) -> list[int]:
    """Exact minimum-cost perfect matching on a square matrix.

    Returns col_of_row: the column assigned to each row. Entries must be
    finite; use a large finite penalty for forbidden pairs.
    """
    cost = np.asarray(cost, dtype=float)
    if cost.ndim != 2 or cost.shape[0] != cost.shape[1]:
        raise ValueError(f"cost must be square, got {cost.shape}")
    if cost.size and not np.all(np.isfinite(cost)):
        raise ValueError("cost entries must be finite")
    n = cost.shape[0]
    if n == 0:
        return []

    c = cost.tolist()
    u = [0.0] * (n + 1)
    v = [0.0] * (n + 1)
    match_row = [0] * (n + 1)   # match_row[j] = row matched to column j, 1-based
    path = [0] * (n + 1)

    for i in range(1, n + 1):
        match_row[0] = i
        j0 = 0
        min_slack = [_INF] * (n + 1)
        used = [False] * (n + 1)
        while True:
            used[j0] = True
            i0 = match_row[j0]
            delta = _INF
            j1 = 0
            row = c[i0 - 1]
            ui = u[i0]
            for j in range(1, n + 1):
                if used[j]:
                    continue
                cur = row[j - 1] - ui - v[j]
                if cur < min_slack[j]:
                    min_slack[j] = cur
                    path[j] = j0
                if min_slack[j] < delta:
                    delta = min_slack[j]
                    j1 = j
            for j in range(n + 1):
                if used[j]:
                    u[match_row[j]] += delta
                    v[j] -= delta
                else:
                    min_slack[j] -= delta
            j0 = j1
            if match_row[j0] == 0:
                break
        while j0:
            j1 = path[j0]
            match_row[j0] = match_row[j1]
            j0 = j1

    col_of_row = [0] * n
    for j in range(1, n + 1):
        col_of_row[match_row[j] - 1] = j - 1
    return col_of_row


@dataclass
class Assignment:
    """Hungarian solution split by the cutoff: matches carry their cost."""

    matches: list[tuple[int, int, float]] = field(default_factory=list)
    unmatched_tracks: list[int] = field(default_factory=list)
    unmatched_dets: list[int] = field(default_factory=list)

    @property
    def total_cost(self) -> float:
        return float(sum(m[2] for m in self.matches))


def hungarian_assign(cost, cutoff: float) -> Assignment:
    """Solve the rectangular assignment gated at a cutoff cost.

    The matrix is padded to square with cutoff-valued dummies, solved
    exactly, and matched pairs costing more than the cutoff are demoted to
    unmatched afterwards.
    """
    cost = np.atleast_2d(np.asarray(cost, dtype=float))
    n_rows, n_cols = cost.shape if cost.size else (0, 0)
    if n_rows == 0 or n_cols == 0:
        return Assignment(
            unmatched_tracks=list(range(n_rows)),
            unmatched_dets=list(range(n_cols)),
        )

    k = max(n_rows, n_cols)
    padded = np.full((k, k), float(cutoff))
    padded[:n_rows, :n_cols] = cost
    col_of_row = solve_square(padded)

    assignment = Assignment()
    matched_cols: set[int] = set()
    for r in range(n_rows):
        col = col_of_row[r]
        if col < n_cols and cost[r, col] <= cutoff:
            assignment.matches.append((r, col, float(cost[r, col])))
            matched_cols.add(col)
        else:
            assignment.unmatched_tracks.append(r)
    assignment.unmatched_dets = [c for c in range(n_cols) if c not in matched_cols]
    return assignment
