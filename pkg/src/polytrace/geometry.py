"""Polygon primitives and raster support for contour extraction.

Coordinates are image pixels, x to the right and y growing downward.
Polygons are (M, 2) float arrays of ring-ordered vertices with an implicit
closing edge. Under the y-down convention a ring traversed clockwise on
screen has positive signed area; ``normalize_orientation`` makes that the
canonical order.

A ``DensifiedContour`` is a fixed-size resampling of a polygon: four
control vertices are inserted where the rays from the bounding-box center
in the top/right/bottom/left directions meet the boundary, and each of the
four arcs between them is resampled to the same number of points. Index 0
is always the top-direction control vertex and the ring runs clockwise.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

# Control-vertex ray directions in the clockwise order the densified ring
# follows: top, right, bottom, left.
ANCHOR_DIRECTIONS = np.array([[0.0, -1.0], [1.0, 0.0], [0.0, 1.0], [-1.0, 0.0]])

_EPS = 1e-9


def as_polygon(vertices, strict: bool = False) -> np.ndarray:
    """Coerce ``vertices`` to an (M, 2) float64 array and validate it.

    With ``strict`` the ring must also be free of consecutive duplicate
    vertices (the implicit closing edge included).
    """
    poly = np.asarray(vertices, dtype=float)
    if poly.ndim != 2 or poly.shape[1] != 2:
        raise ValueError(f"polygon must have shape (M, 2), got {poly.shape}")
    if poly.shape[0] < 3:
        raise ValueError(f"polygon needs at least 3 vertices, got {poly.shape[0]}")
    if not np.all(np.isfinite(poly)):
        raise ValueError("polygon has non-finite coordinates")
    if strict:
        gaps = np.linalg.norm(np.roll(poly, -1, axis=0) - poly, axis=1)
        if np.any(gaps < _EPS):
            raise ValueError("polygon has consecutive duplicate vertices")
    return poly


def bounding_box(points) -> np.ndarray:
    """Return [xmin, ymin, xmax, ymax] of a point set."""
    pts = np.asarray(points, dtype=float)
    return np.array([pts[:, 0].min(), pts[:, 1].min(), pts[:, 0].max(), pts[:, 1].max()])


def bbox_center(points) -> np.ndarray:
    box = bounding_box(points)
    return np.array([(box[0] + box[2]) / 2.0, (box[1] + box[3]) / 2.0])


def signed_area(poly) -> float:
    """Shoelace area of the ring.

    Positive for clockwise traversal on screen (y down), negative for
    counterclockwise.
    """
    p = as_polygon(poly)
    x, y = p[:, 0], p[:, 1]
    xn, yn = np.roll(x, -1), np.roll(y, -1)
    return float(np.sum(x * yn - xn * y) / 2.0)


def polygon_perimeter(poly) -> float:
    p = as_polygon(poly)
    return float(np.linalg.norm(np.roll(p, -1, axis=0) - p, axis=1).sum())


def normalize_orientation(poly) -> np.ndarray:
    """Return the ring reordered clockwise (positive signed area).

    Raises ValueError for zero-area input.
    """
    p = as_polygon(poly)
    area = signed_area(p)
    if abs(area) < _EPS:
        raise ValueError("cannot orient a zero-area polygon")
    if area < 0:
        return p[::-1].copy()
    return p.copy()


def vertex_angle(prev, cur, nxt) -> float:
    """Interior angle at ``cur`` in [0, pi]; pi means collinear."""
    a = np.asarray(prev, dtype=float) - np.asarray(cur, dtype=float)
    b = np.asarray(nxt, dtype=float) - np.asarray(cur, dtype=float)
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na < _EPS or nb < _EPS:
        raise ValueError("angle undefined for coincident points")
    c = np.clip(np.dot(a, b) / (na * nb), -1.0, 1.0)
    return float(np.arccos(c))


def ray_boundary_intersection(poly, center, direction) -> np.ndarray:
    """Intersect a ray from ``center`` with the ring, keeping the crossing
    farthest from the center.

    The outermost crossing is the deterministic choice when a concave
    boundary is crossed more than once; it always lies on the outer sweep
    of the contour.
    """
    p = as_polygon(poly)
    c = np.asarray(center, dtype=float)
    d = np.asarray(direction, dtype=float)
    d = d / np.linalg.norm(d)
    a = p
    b = np.roll(p, -1, axis=0)
    e = b - a
    r = a - c
    denom = d[0] * e[:, 1] - d[1] * e[:, 0]
    best_t = -np.inf
    # generic (non-parallel) edges, solved edge-wise
    with np.errstate(divide="ignore", invalid="ignore"):
        t = (r[:, 0] * e[:, 1] - r[:, 1] * e[:, 0]) / denom
        u = (r[:, 0] * d[1] - r[:, 1] * d[0]) / denom
    ok = (np.abs(denom) > _EPS) & (u >= -_EPS) & (u <= 1.0 + _EPS) & (t >= -_EPS)
    if np.any(ok):
        best_t = float(t[ok].max())
    # edges collinear with the ray contribute their endpoints
    par = np.abs(denom) <= _EPS
    if np.any(par):
        coll = par & (np.abs(r[:, 0] * d[1] - r[:, 1] * d[0]) <= 1e-7)
        for i in np.nonzero(coll)[0]:
            for q in (a[i], b[i]):
                tq = float(np.dot(q - c, d))
                if tq >= -_EPS and tq > best_t:
                    best_t = tq
    if not np.isfinite(best_t):
        raise ValueError("ray does not intersect the polygon boundary")
    return c + max(best_t, 0.0) * d


def insert_control_vertices(poly, s: int = 4) -> tuple[np.ndarray, np.ndarray]:
    """Insert the four directional control vertices on the ring.

    Returns ``(vertices, anchor_indices)`` where the ring is clockwise and
    ``anchor_indices`` locates the top/right/bottom/left control vertices in
    that order. A control vertex coinciding with an existing vertex is not
    duplicated.
    """
    if s != 4:
        raise ValueError("only the four fixed directions are supported")
    p = normalize_orientation(as_polygon(poly, strict=True))
    center = bbox_center(p)
    m = p.shape[0]
    edges_a = p
    edges_b = np.roll(p, -1, axis=0)
    e = edges_b - edges_a
    lens2 = np.maximum(np.einsum("ij,ij->i", e, e), _EPS**2)
    tol = 1e-9
    # anchor -> (edge index, parameter along that edge); anchors hitting an
    # edge end are snapped onto the matching original vertex (u == 0)
    placements = []
    for d in ANCHOR_DIRECTIONS:
        q = ray_boundary_intersection(p, center, d)
        u = np.clip(np.einsum("ij,ij->i", q - edges_a, e) / lens2, 0.0, 1.0)
        proj = edges_a + u[:, None] * e
        idx = int(np.argmin(np.linalg.norm(proj - q, axis=1)))
        uk = float(u[idx])
        if uk >= 1.0 - tol:
            idx, uk = (idx + 1) % m, 0.0
        placements.append((idx, uk, q))

    by_edge: dict[int, list[tuple[float, int, np.ndarray]]] = {}
    for k, (idx, u, q) in enumerate(placements):
        by_edge.setdefault(idx, []).append((u, k, q))
    out: list[np.ndarray] = []
    anchor_pos: dict[int, int] = {}
    for i in range(m):
        out.append(p[i])
        vertex_slot = len(out) - 1
        for u, k, q in sorted(by_edge.get(i, []), key=lambda item: item[0]):
            if u <= tol:
                anchor_pos[k] = vertex_slot
            else:
                out.append(q)
                anchor_pos[k] = len(out) - 1
    anchors = np.array([anchor_pos[k] for k in range(s)], dtype=int)
    return np.array(out), anchors


@dataclass(frozen=True)
class DensifiedContour:
    """Fixed-size clockwise vertex ring with directional anchors.

    ``points`` is (N, 2); ``anchor_indices`` holds the ring positions of the
    top/right/bottom/left control vertices, which by construction are
    0, N/4, N/2 and 3N/4.
    """

    points: np.ndarray
    anchor_indices: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        anchors = np.asarray(self.anchor_indices, dtype=int)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "anchor_indices", anchors)
        n, s = pts.shape[0], anchors.shape[0]
        if pts.ndim != 2 or pts.shape[1] != 2:
            raise ValueError("contour points must have shape (N, 2)")
        if not np.all(np.isfinite(pts)):
            raise ValueError("contour has non-finite coordinates")
        if s < 1 or n % s != 0:
            raise ValueError(f"vertex count {n} not divisible by anchor count {s}")
        expected = np.arange(s) * (n // s)
        if not np.array_equal(anchors, expected):
            raise ValueError(f"anchor indices must be {expected.tolist()}")

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def s(self) -> int:
        return self.anchor_indices.shape[0]


def densify(poly, n_vertices: int = 64) -> DensifiedContour:
    """Resample a polygon to ``n_vertices`` points anchored at the four
    directional control vertices.

    Each of the four boundary arcs between consecutive control vertices is
    resampled uniformly by arc length to n_vertices/4 points; point 0 is the
    top-direction control vertex and the ring is clockwise.
    """
    s = 4
    if n_vertices < s or n_vertices % s != 0:
        raise ValueError(f"vertex count {n_vertices} must be a multiple of {s}")
    ring, anchors = insert_control_vertices(poly, s)
    k = ring.shape[0]
    shift = anchors[0]
    ring = np.roll(ring, -shift, axis=0)
    anchors = (anchors - shift) % k
    if not np.all(np.diff(anchors) > 0):
        raise ValueError("control vertices out of cyclic order")
    per_arc = n_vertices // s
    pieces = []
    bounds = list(anchors) + [k]
    for a0, a1 in zip(bounds[:-1], bounds[1:]):
        chain = ring[a0 : a1 + 1] if a1 < k else np.vstack([ring[a0:], ring[:1]])
        pieces.append(_resample_open_chain(chain, per_arc))
    points = np.vstack(pieces)
    return DensifiedContour(points, np.arange(s) * per_arc)


def _resample_open_chain(chain: np.ndarray, count: int) -> np.ndarray:
    """Uniform arc-length resampling of an open chain; start kept, end dropped."""
    seg = np.linalg.norm(np.diff(chain, axis=0), axis=1)
    total = float(seg.sum())
    if total < _EPS:
        raise ValueError("degenerate zero-length arc between control vertices")
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    targets = np.arange(count) * (total / count)
    x = np.interp(targets, cum, chain[:, 0])
    y = np.interp(targets, cum, chain[:, 1])
    return np.column_stack([x, y])


def densify_x10(contour: DensifiedContour) -> np.ndarray:
    """Subdivide every ring segment into 10 equal parts (original vertices kept)."""
    pts = contour.points if isinstance(contour, DensifiedContour) else np.asarray(contour, dtype=float)
    nxt = np.roll(pts, -1, axis=0)
    f = np.arange(10)[None, :, None] / 10.0
    dense = pts[:, None, :] * (1.0 - f) + nxt[:, None, :] * f
    return dense.reshape(-1, 2)


def relative_coords(contour) -> np.ndarray:
    """Coordinates regularized to [-0.5, 0.5] about the bbox center.

    x_rel = (x - x_ct) / (x_max - x_min) with (x_ct, y_ct) the bounding-box
    midpoint of the contour, and likewise for y.
    """
    pts = contour.points if isinstance(contour, DensifiedContour) else np.asarray(contour, dtype=float)
    box = bounding_box(pts)
    extent = np.array([box[2] - box[0], box[3] - box[1]])
    if np.any(extent < _EPS):
        raise ValueError("contour bounding box has zero extent")
    center = np.array([(box[0] + box[2]) / 2.0, (box[1] + box[3]) / 2.0])
    return (pts - center) / extent


def point_in_polygon(point, poly) -> bool:
    """Even-odd test against the ring (half-open edge rule)."""
    p = as_polygon(poly)
    x, y = float(point[0]), float(point[1])
    a = p
    b = np.roll(p, -1, axis=0)
    crossing = (a[:, 1] <= y) != (b[:, 1] <= y)
    with np.errstate(divide="ignore", invalid="ignore"):
        xint = a[:, 0] + (y - a[:, 1]) * (b[:, 0] - a[:, 0]) / (b[:, 1] - a[:, 1])
    hits = crossing & (xint > x)
    return bool(np.count_nonzero(hits) % 2 == 1)


def rasterize(poly, width: int, height: int) -> np.ndarray:
    """Boolean (height, width) mask; pixel (i, j) is set iff its center
    (j+0.5, i+0.5) is inside by the even-odd rule."""
    if width <= 0 or height <= 0:
        raise ValueError("raster dimensions must be positive")
    p = as_polygon(poly)
    mask = np.zeros((height, width), dtype=bool)
    box = bounding_box(p)
    j0 = max(0, int(np.floor(box[0] - 1.0)))
    j1 = min(width - 1, int(np.ceil(box[2] + 1.0)))
    i0 = max(0, int(np.floor(box[1] - 1.0)))
    i1 = min(height - 1, int(np.ceil(box[3] + 1.0)))
    if j0 > j1 or i0 > i1:
        return mask
    ys = np.arange(i0, i1 + 1) + 0.5
    xs = np.arange(j0, j1 + 1) + 0.5
    parity = np.zeros((ys.size, xs.size), dtype=bool)
    a = p
    b = np.roll(p, -1, axis=0)
    for (x1, y1), (x2, y2) in zip(a, b):
        if y1 == y2:
            continue
        rows = (y1 <= ys) != (y2 <= ys)
        if not np.any(rows):
            continue
        xint = x1 + (ys[rows] - y1) * (x2 - x1) / (y2 - y1)
        parity[rows] ^= xs[None, :] < xint[:, None]
    mask[i0 : i1 + 1, j0 : j1 + 1] = parity
    return mask


def expand_mask(mask: np.ndarray, radius: int) -> np.ndarray:
    """Morphological dilation by a (2r+1) square, i.e. Chebyshev radius r."""
    if radius < 0 or int(radius) != radius:
        raise ValueError("dilation radius must be a non-negative integer")
    m = np.asarray(mask, dtype=bool)
    if radius == 0:
        return m.copy()
    size = 2 * int(radius) + 1
    return ndimage.binary_dilation(m, structure=np.ones((size, size), dtype=bool))
