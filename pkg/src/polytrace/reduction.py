"""Contour vertex reduction: confidence thresholding, vertex non-maximum
suppression and near-straight-angle pruning.

The stages only ever remove vertices; surviving vertices keep their
coordinates and their cyclic order. When a stage would leave fewer than
three survivors the top-3 scored vertices are restored instead, since the
final output must be a polygon.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import vertex_angle

ANGLE_THRESHOLD = 8.0 * np.pi / 9.0


@dataclass(frozen=True)
class ScoredContour:
    points: np.ndarray
    scores: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        sc = np.asarray(self.scores, dtype=float)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "scores", sc)
        if pts.ndim != 2 or pts.shape[1] != 2 or sc.shape != (pts.shape[0],):
            raise ValueError("need (N, 2) points with one score per vertex")
        if np.any(sc < 0) or np.any(sc > 1):
            raise ValueError("scores must lie in [0, 1]")

    def __len__(self):
        return self.points.shape[0]

    def take(self, indices) -> "ScoredContour":
        idx = np.asarray(indices, dtype=int)
        return ScoredContour(self.points[idx], self.scores[idx])


def threshold_vertices(sc: ScoredContour, t: float = 0.6) -> ScoredContour:
    """Keep vertices scoring at least t, in their original cyclic order."""
    return sc.take(np.nonzero(sc.scores >= t)[0])


def mean_segment_length(points) -> float:
    """Mean edge length of the closed ring."""
    pts = np.asarray(points, dtype=float)
    return float(np.linalg.norm(np.roll(pts, -1, axis=0) - pts, axis=1).mean())


def vertex_nms(sc: ScoredContour, radius: float) -> ScoredContour:
    """Greedy suppression: highest score first (ties by lower index), each
    keeper removes every not-yet-kept vertex strictly nearer than radius."""
    if radius < 0:
        raise ValueError("suppression radius must be non-negative")
    n = len(sc)
    order = np.lexsort((np.arange(n), -sc.scores))
    alive = np.ones(n, dtype=bool)
    keep = np.zeros(n, dtype=bool)
    for idx in order:
        if not alive[idx]:
            continue
        keep[idx] = True
        alive[idx] = False
        if radius > 0:
            d = np.linalg.norm(sc.points - sc.points[idx], axis=1)
            alive &= d >= radius
    return sc.take(np.nonzero(keep)[0])


def prune_collinear(poly, angle_threshold: float = ANGLE_THRESHOLD) -> np.ndarray:
    """Drop near-straight vertices one at a time.

    Each pass removes the single vertex with the largest interior angle above
    the threshold, then re-evaluates, because removing a vertex changes its
    neighbors' angles. Stops when no angle exceeds the threshold or only
    three vertices remain.
    """
    pts = np.asarray(poly, dtype=float)
    if pts.shape[0] < 3:
        raise ValueError("polygon needs at least 3 vertices")
    pts = pts.copy()
    while pts.shape[0] > 3:
        n = pts.shape[0]
        angles = np.array(
            [_angle_or_pi(pts[(i - 1) % n], pts[i], pts[(i + 1) % n]) for i in range(n)]
        )
        worst = int(np.argmax(angles))
        if angles[worst] <= angle_threshold:
            break
        pts = np.delete(pts, worst, axis=0)
    return pts


def _angle_or_pi(prev, cur, nxt):
    """Interior angle, treating a vertex with a coincident neighbor as flat."""
    try:
        return vertex_angle(prev, cur, nxt)
    except ValueError:
        return np.pi


def reduce(sc: ScoredContour, t: float = 0.6, angle_threshold: float = ANGLE_THRESHOLD) -> np.ndarray:
    """Full reduction pipeline: threshold, vertex NMS, angle pruning.

    The NMS radius is half the mean segment length of the input contour,
    frozen before any vertex is removed. Returns the corner polygon as an
    (M, 2) array with at least three vertices.
    """
    if len(sc) < 3:
        raise ValueError("contour needs at least 3 scored vertices")
    radius = mean_segment_length(sc.points) / 2.0
    kept = threshold_vertices(sc, t)
    if len(kept) < 3:
        kept = _top3(sc)
    kept = vertex_nms(kept, radius)
    if len(kept) < 3:
        kept = vertex_nms(_top3(sc), 0.0)
    return prune_collinear(kept.points, angle_threshold)


def _top3(sc: ScoredContour) -> ScoredContour:
    order = np.lexsort((np.arange(len(sc)), -sc.scores))[:3]
    return sc.take(np.sort(order))
