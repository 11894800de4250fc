"""Contour initialization: heatmap targets, peak decoding and the initial
contour composed from predicted offsets.

Heatmaps and feature grids live on a stride-4 grid; cell (row, col) covers
the 4x4 pixel block starting at (4*col, 4*row). Decoded peak positions are
reported at cell centers in full resolution, i.e. ((col + 0.5) * 4,
(row + 0.5) * 4).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .geometry import DensifiedContour

STRIDE = 4


@dataclass(frozen=True)
class CenterDetection:
    position: np.ndarray  # (2,) full-resolution pixels
    score: float

    def __post_init__(self):
        object.__setattr__(self, "position", np.asarray(self.position, dtype=float))
        if not 0.0 <= self.score <= 1.0:
            raise ValueError("detection score must be a probability")

    @property
    def cell(self) -> tuple[int, int]:
        """(row, col) of the stride-4 cell containing the position."""
        return int(self.position[1] // STRIDE), int(self.position[0] // STRIDE)


def grid_shape(image_dims) -> tuple[int, int]:
    """(rows, cols) of the stride-4 grid for an image of (width, height)."""
    width, height = image_dims
    return int(np.ceil(height / STRIDE)), int(np.ceil(width / STRIDE))


def build_heatmap_target(centers, bbox_sizes, image_dims) -> np.ndarray:
    """Gaussian keypoint target on the stride-4 grid.

    Each center contributes a bump with value exactly 1 at the cell that
    contains it and sigma = max(1, min(w, h) / 24) grid cells; overlapping
    bumps combine by per-pixel maximum.
    """
    width, height = image_dims
    rows, cols = grid_shape(image_dims)
    heat = np.zeros((rows, cols))
    vv, uu = np.mgrid[0:rows, 0:cols]
    for center, (w, h) in zip(np.atleast_2d(np.asarray(centers, dtype=float)), bbox_sizes):
        x, y = center
        if not (0 <= x < width and 0 <= y < height):
            raise ValueError(f"center {center} outside the image")
        u0, v0 = int(x // STRIDE), int(y // STRIDE)
        sigma = max(1.0, min(w, h) / (6.0 * STRIDE))
        bump = np.exp(-((uu - u0) ** 2 + (vv - v0) ** 2) / (2.0 * sigma**2))
        np.maximum(heat, bump, out=heat)
    return heat


def decode_peaks(heatmap, threshold: float = 0.2, top_k: int = 200) -> list[CenterDetection]:
    """Extract center detections from a heatmap.

    Cells equal to their 3x3 neighborhood maximum are peak candidates (ties
    kept); the top_k highest survive, then values must exceed ``threshold``.
    The result is sorted by descending score with row-major order on ties.
    """
    heat = np.asarray(heatmap, dtype=float)
    neighborhood = ndimage.maximum_filter(heat, size=3, mode="constant", cval=-np.inf)
    peaks = np.nonzero(heat >= neighborhood)
    values = heat[peaks]
    flat = peaks[0] * heat.shape[1] + peaks[1]
    order = np.lexsort((flat, -values))[:top_k]
    out = []
    for idx in order:
        score = float(values[idx])
        if score <= threshold:
            continue
        row, col = int(peaks[0][idx]), int(peaks[1][idx])
        position = np.array([(col + 0.5) * STRIDE, (row + 0.5) * STRIDE])
        out.append(CenterDetection(position, score))
    return out


def compose_initial_contour(center, offsets, gamma: float = 10.0) -> DensifiedContour:
    """Initial contour from a center point and stride-4 offsets.

    Offsets are converted to full-resolution pixels (times the stride) before
    the expansion factor is applied; the ring inherits the four-anchor layout
    by index.
    """
    c = np.asarray(center.position if isinstance(center, CenterDetection) else center, dtype=float)
    off = np.asarray(offsets, dtype=float)
    if off.ndim != 2 or off.shape[1] != 2:
        raise ValueError("offsets must have shape (N, 2)")
    n = off.shape[0]
    if n % 4 != 0:
        raise ValueError("offset count must be divisible by 4")
    points = c[None, :] + gamma * (off * STRIDE)
    return DensifiedContour(points, np.arange(4) * (n // 4))


def offset_targets(gt: DensifiedContour, center, gamma: float = 10.0) -> np.ndarray:
    """Stride-4 offsets that compose back to gt exactly: (gt - center) / (gamma * stride)."""
    c = np.asarray(center, dtype=float)
    return (gt.points - c[None, :]) / (gamma * STRIDE)
