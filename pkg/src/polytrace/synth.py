"""Synthetic scenes and the handcrafted stride-4 feature grid.

Scenes are grayscale rasters of bright, non-overlapping buildings
(rectangles, rotated rectangles, L-shapes) on a dark background with
additive noise; everything is a pure function of the seed, so datasets are
reproducible bit for bit.

The feature grid stands in for a learned backbone: 8 channels of
downsampled intensity, central-difference gradients, gradient magnitude,
normalized coordinates and two Gaussian blurs. Channel order is fixed and
relied on by trained checkpoints.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .geometry import densify, normalize_orientation, rasterize

FEATURE_CHANNELS = 8
STRIDE = 4

SHAPE_KINDS = ("rect", "rot_rect", "l_shape")


@dataclass(frozen=True)
class SyntheticScene:
    image: np.ndarray            # (H, W) uint8 grayscale
    buildings: list              # list of (M, 2) clockwise polygons
    seed: int

    @property
    def frame_dims(self):
        return self.image.shape[1], self.image.shape[0]


@dataclass(frozen=True)
class SceneSpec:
    """Knobs for scene generation; defaults suit 128 x 128 frames."""

    frame_dims: tuple = (128, 128)
    n_buildings: tuple = (1, 4)
    size_range: tuple = (20.0, 48.0)
    shape_mix: tuple = (0.45, 0.30, 0.25)  # rect / rotated rect / L-shape
    margin: float = 6.0
    gap: float = 6.0
    background: tuple = (25.0, 55.0)
    foreground: tuple = (150.0, 230.0)
    noise_sigma: float = 2.5
    max_tries: int = 200


def _make_rect(rng, spec):
    w = rng.uniform(*spec.size_range)
    h = rng.uniform(*spec.size_range)
    return np.array([[0.0, 0.0], [w, 0.0], [w, h], [0.0, h]])


def _make_rot_rect(rng, spec):
    rect = _make_rect(rng, spec)
    theta = rng.uniform(0.0, np.pi / 2)
    rot = np.array([[np.cos(theta), -np.sin(theta)], [np.sin(theta), np.cos(theta)]])
    return rect @ rot.T


def _make_l_shape(rng, spec):
    w = rng.uniform(*spec.size_range)
    h = rng.uniform(*spec.size_range)
    # notch below half the side keeps the bbox center inside the polygon,
    # which anchored densification requires
    cw = w * rng.uniform(0.3, 0.45)
    ch = h * rng.uniform(0.3, 0.45)
    ring = np.array(
        [[0.0, 0.0], [w - cw, 0.0], [w - cw, ch], [w, ch], [w, h], [0.0, h]]
    )
    corner = int(rng.integers(0, 4))
    if corner in (1, 3):
        ring = ring * [-1.0, 1.0] + [w, 0.0]
    if corner in (2, 3):
        ring = ring * [1.0, -1.0] + [0.0, h]
    return ring


_MAKERS = {"rect": _make_rect, "rot_rect": _make_rot_rect, "l_shape": _make_l_shape}


def generate_scene(seed: int, spec: SceneSpec = SceneSpec()) -> SyntheticScene:
    """Deterministic scene: placed buildings, filled raster, additive noise.

    Raises RuntimeError when the requested count cannot be placed without
    overlap within the retry budget.
    """
    rng = np.random.default_rng(np.random.SeedSequence([0x5CEE, int(seed)]))
    width, height = spec.frame_dims
    lo, hi = spec.n_buildings
    count = int(rng.integers(lo, hi + 1))
    mix = np.asarray(spec.shape_mix, dtype=float)
    mix = mix / mix.sum()

    buildings = []
    boxes = []  # (xmin, ymin, xmax, ymax) inflated by gap/2
    for _ in range(count):
        placed = False
        for _ in range(spec.max_tries):
            kind = SHAPE_KINDS[int(rng.choice(len(SHAPE_KINDS), p=mix))]
            poly = _MAKERS[kind](rng, spec)
            extent = poly.max(axis=0) - poly.min(axis=0)
            if np.any(extent + 2 * spec.margin >= (width, height)):
                continue
            shift = rng.uniform(
                spec.margin, np.array([width, height]) - spec.margin - extent, size=2
            )
            poly = poly - poly.min(axis=0) + shift
            box = np.array(
                [poly[:, 0].min(), poly[:, 1].min(), poly[:, 0].max(), poly[:, 1].max()]
            ) + np.array([-1.0, -1.0, 1.0, 1.0]) * (spec.gap / 2)
            if any(_boxes_overlap(box, other) for other in boxes):
                continue
            try:
                densify(poly, 8)  # every building must be densifiable
            except ValueError:
                continue
            buildings.append(normalize_orientation(poly))
            boxes.append(box)
            placed = True
            break
        if not placed:
            raise RuntimeError(
                f"could not place building {len(buildings) + 1}/{count} without overlap"
            )

    image = np.full((height, width), rng.uniform(*spec.background))
    for poly in buildings:
        fill = rng.uniform(*spec.foreground)
        image[rasterize(poly, width, height)] = fill
    if spec.noise_sigma > 0:
        image = image + rng.normal(0.0, spec.noise_sigma, size=image.shape)
    image = np.clip(np.rint(image), 0, 255).astype(np.uint8)
    return SyntheticScene(image, buildings, int(seed))


def _boxes_overlap(a, b):
    return not (a[2] < b[0] or b[2] < a[0] or a[3] < b[1] or b[3] < a[1])


def feature_provider(image) -> np.ndarray:
    """Handcrafted stride-4 feature grid, shape (H/4, W/4, 8).

    Channels: block-mean intensity, x/y central-difference gradients,
    gradient magnitude, normalized x/y coordinates spanning [0, 1], and
    Gaussian blurs of the intensity at sigma 1 and 3 grid cells.
    """
    img = np.asarray(image, dtype=float)
    if img.max() > 1.0:
        img = img / 255.0
    h, w = img.shape
    pad_h = (-h) % STRIDE
    pad_w = (-w) % STRIDE
    if pad_h or pad_w:
        img = np.pad(img, ((0, pad_h), (0, pad_w)), mode="edge")
    rows, cols = img.shape[0] // STRIDE, img.shape[1] // STRIDE
    down = img.reshape(rows, STRIDE, cols, STRIDE).mean(axis=(1, 3))

    gy, gx = np.gradient(down)
    mag = np.hypot(gx, gy)
    xs = np.linspace(0.0, 1.0, cols) if cols > 1 else np.zeros(cols)
    ys = np.linspace(0.0, 1.0, rows) if rows > 1 else np.zeros(rows)
    coord_x, coord_y = np.meshgrid(xs, ys)
    blur1 = ndimage.gaussian_filter(down, 1.0, mode="nearest")
    blur3 = ndimage.gaussian_filter(down, 3.0, mode="nearest")
    return np.stack([down, gx, gy, mag, coord_x, coord_y, blur1, blur3], axis=2)
