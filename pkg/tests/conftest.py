import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(20240811)


def random_convex_polygon(rng, n_points=12, scale=60.0, offset=(70.0, 70.0)):
    """Convex hull of uniform points; returns a counterclockwise-by-angle ring."""
    pts = rng.uniform(-scale / 2, scale / 2, size=(n_points, 2)) + np.asarray(offset)
    hull = convex_hull(pts)
    if hull.shape[0] < 3:
        return random_convex_polygon(rng, n_points, scale, offset)
    return hull


def convex_hull(points):
    """Andrew's monotone chain, returning hull vertices in CCW (math) order."""
    pts = np.unique(np.asarray(points, dtype=float), axis=0)
    pts = pts[np.lexsort((pts[:, 1], pts[:, 0]))]
    if pts.shape[0] < 3:
        return pts

    def cross2(a, b):
        return a[0] * b[1] - a[1] * b[0]

    def half(seq):
        out = []
        for p in seq:
            while len(out) >= 2 and cross2(out[-1] - out[-2], p - out[-2]) <= 0:
                out.pop()
            out.append(p)
        return out

    lower = half(pts)
    upper = half(pts[::-1])
    return np.array(lower[:-1] + upper[:-1])


def point_segment_distance(points, a, b):
    """Distance from each point to segment ab."""
    points = np.atleast_2d(points)
    ab = b - a
    denom = max(float(ab @ ab), 1e-300)
    t = np.clip((points - a) @ ab / denom, 0.0, 1.0)
    proj = a + t[:, None] * ab
    return np.linalg.norm(points - proj, axis=1)


def points_to_ring_distance(points, ring):
    """Distance from each point to the closed polyline through ring."""
    d = np.full(np.atleast_2d(points).shape[0], np.inf)
    for a, b in zip(ring, np.roll(ring, -1, axis=0)):
        d = np.minimum(d, point_segment_distance(points, a, b))
    return d


def sample_ring(ring, step=0.05):
    """Dense boundary samples, roughly `step` apart along every edge."""
    out = []
    for a, b in zip(ring, np.roll(ring, -1, axis=0)):
        length = np.linalg.norm(b - a)
        k = max(int(np.ceil(length / step)), 1)
        f = np.arange(k)[:, None] / k
        out.append(a * (1 - f) + b * f)
    return np.vstack(out)


def hausdorff_between_rings(ring_a, ring_b, step=0.05):
    """Symmetric Hausdorff distance between two closed polylines (sampled oracle)."""
    sa = sample_ring(ring_a, step)
    sb = sample_ring(ring_b, step)
    d_ab = points_to_ring_distance(sa, ring_b).max()
    d_ba = points_to_ring_distance(sb, ring_a).max()
    return max(float(d_ab), float(d_ba))


def central_difference(f, x, h=1e-5):
    """Central finite-difference gradient of scalar f at array x."""
    x = np.array(x, dtype=float)
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f(x)
        flat[i] = orig - h
        fm = f(x)
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * h)
    return grad


def relative_error(a, b):
    a = np.asarray(a, dtype=float).ravel()
    b = np.asarray(b, dtype=float).ravel()
    denom = max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)
    return float(np.linalg.norm(a - b) / denom)
