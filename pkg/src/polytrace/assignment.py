"""Optimal bipartite matching between ground-truth corners and predicted
vertices, plus the nearest-point queries used by the matching losses.

Cost matrices are (M, N) with M ground-truth corners in rows and N predicted
vertices in columns, M <= N. All tie-breaking is by lowest index so results
are reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Assignment:
    """Injective row-to-column map: row i is matched to column sigma[i]."""

    sigma: np.ndarray

    def __post_init__(self):
        sig = np.asarray(self.sigma, dtype=int)
        object.__setattr__(self, "sigma", sig)
        if sig.ndim != 1:
            raise ValueError("assignment must be a 1-D index array")
        if np.unique(sig).size != sig.size:
            raise ValueError("assignment columns must be distinct")

    @property
    def n_rows(self) -> int:
        return self.sigma.shape[0]

    def matched_columns(self) -> np.ndarray:
        return self.sigma

    def unmatched_columns(self, n_columns: int) -> np.ndarray:
        mask = np.ones(n_columns, dtype=bool)
        mask[self.sigma] = False
        return np.nonzero(mask)[0]


def match_cost(
    gt_corners,
    pred_points,
    valid_probs,
    delta: float = 5.0,
    *,
    diagonal: float,
) -> np.ndarray:
    """Pairwise matching cost between corners and predicted vertices.

    Entry (i, j) is ``-c_j + delta * d(i, j)`` where c_j is the valid-class
    probability of vertex j and d is the Euclidean distance in pixels divided
    by ``diagonal`` (the image diagonal), so both terms live on comparable
    scales.
    """
    corners = np.asarray(gt_corners, dtype=float)
    preds = np.asarray(pred_points, dtype=float)
    probs = np.asarray(valid_probs, dtype=float)
    if probs.ndim != 1 or probs.shape[0] != preds.shape[0]:
        raise ValueError("one probability per predicted vertex required")
    if np.any(probs < 0) or np.any(probs > 1):
        raise ValueError("probabilities must lie in [0, 1]")
    if corners.shape[0] > preds.shape[0]:
        raise ValueError("more corners than predicted vertices")
    if diagonal <= 0:
        raise ValueError("diagonal must be positive")
    dists = np.linalg.norm(corners[:, None, :] - preds[None, :, :], axis=2)
    return -probs[None, :] + delta * dists / diagonal


def hungarian(cost) -> Assignment:
    """Minimum-cost injective assignment of every row to a distinct column.

    Exact O(n^3) shortest-augmenting-path algorithm with dual potentials.
    Requires a finite (M, N) matrix with M <= N.
    """
    a = np.asarray(cost, dtype=float)
    if a.ndim != 2 or a.size == 0:
        raise ValueError("cost matrix must be a non-empty 2-D array")
    m, n = a.shape
    if m > n:
        raise ValueError(f"cost matrix needs rows <= columns, got {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError("cost matrix entries must be finite")

    INF = np.inf
    u = np.zeros(m + 1)
    v = np.zeros(n + 1)
    col_row = np.zeros(n + 1, dtype=int)  # row matched to column j (0 = free)
    for i in range(1, m + 1):
        col_row[0] = i
        j0 = 0
        minv = np.full(n + 1, INF)
        way = np.zeros(n + 1, dtype=int)
        used = np.zeros(n + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = col_row[j0]
            free = ~used[1:]
            cur = a[i0 - 1, :] - u[i0] - v[1:]
            improve = free & (cur < minv[1:])
            minv[1:][improve] = cur[improve]
            way[1:][improve] = j0
            # lowest index among the free columns attaining the minimum
            masked = np.where(free, minv[1:], INF)
            j1 = int(np.argmin(masked)) + 1
            delta = masked[j1 - 1]
            u[col_row[used]] += delta
            v[used] -= delta
            minv[1:][free] -= delta
            j0 = j1
            if col_row[j0] == 0:
                break
        while j0 != 0:
            j1 = way[j0]
            col_row[j0] = col_row[j1]
            j0 = j1
    sigma = np.zeros(m, dtype=int)
    for j in range(1, n + 1):
        if col_row[j] != 0:
            sigma[col_row[j] - 1] = j - 1
    return Assignment(sigma)


def assignment_total_cost(cost, assignment: Assignment) -> float:
    a = np.asarray(cost, dtype=float)
    rows = np.arange(assignment.n_rows)
    return float(a[rows, assignment.sigma].sum())


def nearest_point_index(point, points) -> int:
    """Index of the closest point by Euclidean distance, lowest index on ties."""
    pts = np.asarray(points, dtype=float)
    if pts.size == 0:
        raise ValueError("nearest-point query against an empty list")
    d = np.linalg.norm(pts - np.asarray(point, dtype=float), axis=1)
    return int(np.argmin(d))


def nearest_point_indices(query_points, points) -> np.ndarray:
    """Vectorized nearest_point_index for every query point."""
    q = np.asarray(query_points, dtype=float)
    pts = np.asarray(points, dtype=float)
    if pts.size == 0:
        raise ValueError("nearest-point query against an empty list")
    d = np.linalg.norm(q[:, None, :] - pts[None, :, :], axis=2)
    return np.argmin(d, axis=1)
