"""Contour-evolution micro-network.

Per-vertex features (sampled grid channels plus relative coordinates) run
through a circular 1-D convolution encoder that aggregates detail-to-global
context: an up-dimensioning 1x1 layer, then kernel sizes 3, 9 and 21 with
residual shortcuts, then fusion of a global max-pooled vector that is
broadcast-concatenated back onto every vertex. Two pointwise heads emit the
per-vertex coordinate offsets and the two-class validity logits.

Forward passes cache every activation needed by :func:`backward`, which
produces exact reverse-mode gradients for all parameters and for the input
vertex features. Arrays are (B, N, D) batched internally; the public
single-instance entry points wrap a batch of one.
"""

from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np

from .geometry import DensifiedContour, bounding_box

ENCODER_WIDTH = 128
KERNEL_SIZES = {"detail": 3, "local": 9, "global": 21}


@dataclass
class EvolutionParams:
    """Weights of the micro-network; see :meth:`initialize` for shapes."""

    up_w: np.ndarray        # (W, C+2)
    up_b: np.ndarray        # (W,)
    detail_w: np.ndarray    # (W, W, 3)
    detail_b: np.ndarray
    local_w: np.ndarray     # (W, W, 9)
    local_b: np.ndarray
    global_w: np.ndarray    # (W, W, 21)
    global_b: np.ndarray
    fuse_w: np.ndarray      # (W, 2W), pooled vector in the second half
    fuse_b: np.ndarray
    offset_w: np.ndarray    # (2, W)
    offset_b: np.ndarray
    cls_w: np.ndarray       # (2, W)
    cls_b: np.ndarray

    @classmethod
    def initialize(cls, feature_channels: int, width: int = ENCODER_WIDTH, rng=None) -> "EvolutionParams":
        """Fresh parameters: encoder weights uniform in +-sqrt(1/(k*D_in)),
        both heads zero so the first evolution step is the identity."""
        rng = np.random.default_rng() if rng is None else rng
        d_in = feature_channels + 2

        def uniform(shape, fan):
            a = np.sqrt(1.0 / fan)
            return rng.uniform(-a, a, size=shape)

        return cls(
            up_w=uniform((width, d_in), d_in),
            up_b=np.zeros(width),
            detail_w=uniform((width, width, 3), 3 * width),
            detail_b=np.zeros(width),
            local_w=uniform((width, width, 9), 9 * width),
            local_b=np.zeros(width),
            global_w=uniform((width, width, 21), 21 * width),
            global_b=np.zeros(width),
            fuse_w=uniform((width, 2 * width), 2 * width),
            fuse_b=np.zeros(width),
            offset_w=np.zeros((2, width)),
            offset_b=np.zeros(2),
            cls_w=np.zeros((2, width)),
            cls_b=np.zeros(2),
        )

    @property
    def width(self) -> int:
        return self.up_w.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.up_w.shape[1]

    def arrays(self):
        """Ordered (name, array) pairs; the canonical flattening."""
        for f in fields(self):
            yield f.name, getattr(self, f.name)

    @classmethod
    def from_arrays(cls, named: dict) -> "EvolutionParams":
        return cls(**{f.name: np.asarray(named[f.name], dtype=float) for f in fields(cls)})


@dataclass
class EvolutionState:
    contour: DensifiedContour
    iteration: int = 0


def sample_features(grid, points) -> np.ndarray:
    """Bilinear interpolation of every grid channel at stride-4 coordinates.

    ``grid`` is (rows, cols, C); points are full-resolution pixels, mapped to
    grid coordinates by dividing by the stride and clamped to the grid.
    """
    g = np.asarray(grid, dtype=float)
    pts = np.asarray(points, dtype=float)
    rows, cols = g.shape[:2]
    gx = np.clip(pts[:, 0] / 4.0, 0.0, cols - 1.0)
    gy = np.clip(pts[:, 1] / 4.0, 0.0, rows - 1.0)
    x0 = np.clip(np.floor(gx).astype(int), 0, max(cols - 2, 0))
    y0 = np.clip(np.floor(gy).astype(int), 0, max(rows - 2, 0))
    fx = (gx - x0)[:, None]
    fy = (gy - y0)[:, None]
    x1 = np.minimum(x0 + 1, cols - 1)
    y1 = np.minimum(y0 + 1, rows - 1)
    return (
        g[y0, x0] * (1 - fy) * (1 - fx)
        + g[y0, x1] * (1 - fy) * fx
        + g[y1, x0] * fy * (1 - fx)
        + g[y1, x1] * fy * fx
    )


def relative_coords_safe(points) -> np.ndarray:
    """Bbox-regularized coordinates; zero where the bbox extent degenerates."""
    pts = np.asarray(points, dtype=float)
    box = bounding_box(pts)
    extent = np.array([box[2] - box[0], box[3] - box[1]])
    center = np.array([(box[0] + box[2]) / 2.0, (box[1] + box[3]) / 2.0])
    safe = np.where(extent < 1e-12, 1.0, extent)
    return (pts - center) / safe


def assemble_vertex_features(sampled, rel) -> np.ndarray:
    """Concatenate sampled channels with the two relative coordinates."""
    s = np.asarray(sampled, dtype=float)
    r = np.asarray(rel, dtype=float)
    if s.shape[0] != r.shape[0]:
        raise ValueError("sampled features and relative coords disagree on N")
    if r.shape[1] != 2:
        raise ValueError("relative coordinates must be (N, 2)")
    return np.concatenate([s, r], axis=1)


def circular_conv1d(x, kernel, bias) -> np.ndarray:
    """1-D convolution over the vertex axis with wrap-around padding.

    ``x`` is (N, D_in), ``kernel`` is (D_out, D_in, k) with odd k; output
    vertex n sees inputs n-(k-1)/2 .. n+(k-1)/2 modulo N.
    """
    k = kernel.shape[2]
    if k % 2 == 0:
        raise ValueError("circular convolution requires an odd kernel size")
    out, _ = _cconv_forward(np.asarray(x, dtype=float)[None], kernel, np.asarray(bias, dtype=float))
    return out[0]


def _cconv_cols(x, k):
    """Wrap-around im2col along axis 1: (B, N, D) -> (B, N, k*D)."""
    b, n, d = x.shape
    p = (k - 1) // 2
    padded = x[:, np.arange(-p, n + p) % n]
    cols = np.empty((b, n, k * d))
    for t in range(k):
        cols[:, :, t * d : (t + 1) * d] = padded[:, t : t + n]
    return cols


def _cconv_forward(x, kernel, bias):
    d_out, d_in, k = kernel.shape
    cols = _cconv_cols(x, k)
    w = kernel.transpose(2, 1, 0).reshape(k * d_in, d_out)
    return cols @ w + bias, cols


def _cconv_backward(d_out_arr, cols, x_shape, kernel):
    d_out_ch, d_in, k = kernel.shape
    b, n, _ = x_shape
    p = (k - 1) // 2
    w = kernel.transpose(2, 1, 0).reshape(k * d_in, d_out_ch)
    d_cols = d_out_arr @ w.T
    # fold the column gradients back through the circular padding
    d_padded = np.zeros((b, n + 2 * p, d_in))
    for t in range(k):
        d_padded[:, t : t + n] += d_cols[:, :, t * d_in : (t + 1) * d_in]
    if p < n:
        d_x = d_padded[:, p : p + n].copy()
        d_x[:, n - p :] += d_padded[:, :p]
        d_x[:, :p] += d_padded[:, n + p :]
    else:
        d_x = np.zeros(x_shape)
        np.add.at(d_x, (slice(None), np.arange(-p, n + p) % n), d_padded)
    flat_cols = cols.reshape(-1, k * d_in)
    flat_dout = d_out_arr.reshape(-1, d_out_ch)
    d_w = (flat_cols.T @ flat_dout).reshape(k, d_in, d_out_ch).transpose(2, 1, 0)
    d_b = flat_dout.sum(axis=0)
    return d_x, d_w, d_b


def _relu(x):
    return np.maximum(x, 0.0)


def softmax(logits):
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_backward(probs, d_probs):
    """d(logits) given d(probs) through a softmax."""
    inner = (d_probs * probs).sum(axis=-1, keepdims=True)
    return probs * (d_probs - inner)


def forward(features, params: EvolutionParams):
    """Run the micro-network on (B, N, C+2) vertex features.

    Returns (offsets, logits, probs, cache); offsets are (B, N, 2) in pixels,
    probs the per-vertex two-class softmax (valid class last).
    """
    x = np.asarray(features, dtype=float)
    if x.ndim == 2:
        x = x[None]
    cache = {"features": x}

    z0 = x @ params.up_w.T + params.up_b
    f0 = _relu(z0)
    cache["z0"], cache["f0"] = z0, f0

    f_prev = f0
    for name in ("detail", "local", "global"):
        kernel = getattr(params, f"{name}_w")
        bias = getattr(params, f"{name}_b")
        z, cols = _cconv_forward(f_prev, kernel, bias)
        h = _relu(z)
        f_prev = f_prev + h
        cache[f"{name}_z"], cache[f"{name}_cols"], cache[f"{name}_out"] = z, cols, f_prev

    f3 = f_prev
    pooled = f3.max(axis=1)
    argmax = f3.argmax(axis=1)
    cat = np.concatenate([f3, np.broadcast_to(pooled[:, None, :], f3.shape)], axis=2)
    z4 = cat @ params.fuse_w.T + params.fuse_b
    f4 = _relu(z4)
    cache.update(pooled_argmax=argmax, cat=cat, z4=z4, f4=f4)

    offsets = f4 @ params.offset_w.T + params.offset_b
    logits = f4 @ params.cls_w.T + params.cls_b
    probs = softmax(logits)
    cache["probs"] = probs
    return offsets, logits, probs, cache


def backward(cache, params: EvolutionParams, d_offsets=None, d_logits=None):
    """Reverse-mode gradients for every parameter and the input features.

    Returns (grads, d_features) where ``grads`` maps parameter field names to
    arrays of matching shapes.
    """
    f4 = cache.get("f4")
    if f4 is None:
        raise ValueError("backward requires the cache of a prior forward pass")
    b, n, width = f4.shape
    d_f4 = np.zeros_like(f4)
    grads = {name: np.zeros_like(arr) for name, arr in params.arrays()}

    if d_offsets is not None:
        d_offsets = np.asarray(d_offsets, dtype=float).reshape(b, n, 2)
        flat = d_offsets.reshape(-1, 2)
        grads["offset_w"] += flat.T @ f4.reshape(-1, width)
        grads["offset_b"] += flat.sum(axis=0)
        d_f4 += d_offsets @ params.offset_w
    if d_logits is not None:
        d_logits = np.asarray(d_logits, dtype=float).reshape(b, n, 2)
        flat = d_logits.reshape(-1, 2)
        grads["cls_w"] += flat.T @ f4.reshape(-1, width)
        grads["cls_b"] += flat.sum(axis=0)
        d_f4 += d_logits @ params.cls_w

    d_z4 = d_f4 * (cache["z4"] > 0)
    flat_dz4 = d_z4.reshape(-1, width)
    grads["fuse_w"] += flat_dz4.T @ cache["cat"].reshape(-1, 2 * width)
    grads["fuse_b"] += flat_dz4.sum(axis=0)
    d_cat = d_z4 @ params.fuse_w

    d_f3 = d_cat[:, :, :width].copy()
    d_pooled = d_cat[:, :, width:].sum(axis=1)
    argmax = cache["pooled_argmax"]
    b_idx = np.arange(b)[:, None]
    w_idx = np.arange(width)[None, :]
    d_f3[b_idx, argmax, w_idx] += d_pooled

    d_prev = d_f3
    layer_inputs = {"detail": cache["f0"], "local": cache["detail_out"], "global": cache["local_out"]}
    for name in ("global", "local", "detail"):
        kernel = getattr(params, f"{name}_w")
        d_h = d_prev * (cache[f"{name}_z"] > 0)
        d_x, d_w, d_b = _cconv_backward(d_h, cache[f"{name}_cols"], layer_inputs[name].shape, kernel)
        grads[f"{name}_w"] += d_w
        grads[f"{name}_b"] += d_b
        d_prev = d_prev + d_x  # residual shortcut

    d_z0 = d_prev * (cache["z0"] > 0)
    flat_dz0 = d_z0.reshape(-1, width)
    grads["up_w"] += flat_dz0.T @ cache["features"].reshape(-1, params.feature_dim)
    grads["up_b"] += flat_dz0.sum(axis=0)
    d_features = d_z0 @ params.up_w
    return grads, d_features


def evolve_once(state: EvolutionState, grid, params: EvolutionParams, max_iterations: int = 2):
    """One evolution round: assemble features, predict offsets, move vertices.

    Returns (new_state, valid_probs). The classification probabilities are
    produced every round but only the final round's are consumed downstream.
    """
    if state.iteration >= max_iterations:
        raise ValueError(f"contour already evolved {state.iteration} times")
    pts = state.contour.points
    feats = assemble_vertex_features(sample_features(grid, pts), relative_coords_safe(pts))
    offsets, _, probs, _ = forward(feats[None], params)
    moved = DensifiedContour(pts + offsets[0], state.contour.anchor_indices)
    return EvolutionState(moved, state.iteration + 1), probs[0, :, 1]
