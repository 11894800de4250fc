"""Detection heads, the assembled model parameters, checkpoint files and
whole-image inference.

The trainable model is three pieces sharing the handcrafted feature grid:
a center head (3x3 conv, ReLU, 1x1 conv, sigmoid) producing the keypoint
heatmap, an offset head (two 3x3 convs with ReLU, then 1x1) producing a
2N-channel offset map read at center cells, and the contour-evolution
micro-network applied for a fixed number of rounds.

Checkpoint format (version 1): the ASCII magic line ``PTCK0001``, one JSON
header line listing array names/shapes plus free-form metadata, then the
raw row-major float64 little-endian buffers concatenated in header order.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from . import evolution as evo
from .config import RunConfig
from .detection import STRIDE, compose_initial_contour, decode_peaks
from .synth import feature_provider

CHECKPOINT_MAGIC = b"PTCK0001"


@dataclass
class PipelineParams:
    center_w1: np.ndarray   # (H1, C, 3, 3)
    center_b1: np.ndarray
    center_w2: np.ndarray   # (1, H1)
    center_b2: np.ndarray
    offset_w1: np.ndarray   # (H2, C, 3, 3)
    offset_b1: np.ndarray
    offset_w2: np.ndarray   # (H2, H2, 3, 3)
    offset_b2: np.ndarray
    offset_w3: np.ndarray   # (2N, H2)
    offset_b3: np.ndarray
    evolution: evo.EvolutionParams

    HEAD_FIELDS = (
        "center_w1", "center_b1", "center_w2", "center_b2",
        "offset_w1", "offset_b1", "offset_w2", "offset_b2",
        "offset_w3", "offset_b3",
    )

    @classmethod
    def initialize(cls, cfg: RunConfig, rng=None) -> "PipelineParams":
        rng = np.random.default_rng() if rng is None else rng
        c = cfg.feature_channels
        h1, h2 = cfg.center_hidden, cfg.offset_hidden
        n = cfg.n_vertices

        def uniform(shape, fan):
            a = np.sqrt(1.0 / fan)
            return rng.uniform(-a, a, size=shape)

        return cls(
            center_w1=uniform((h1, c, 3, 3), 9 * c),
            center_b1=np.zeros(h1),
            center_w2=uniform((1, h1), h1),
            # bias the sigmoid toward the background prior of 0.1
            center_b2=np.full(1, float(np.log(0.1 / 0.9))),
            offset_w1=uniform((h2, c, 3, 3), 9 * c),
            offset_b1=np.zeros(h2),
            offset_w2=uniform((h2, h2, 3, 3), 9 * h2),
            offset_b2=np.zeros(h2),
            offset_w3=np.zeros((2 * n, h2)),
            offset_b3=np.zeros(2 * n),
            evolution=evo.EvolutionParams.initialize(c, width=cfg.encoder_width, rng=rng),
        )

    @property
    def n_vertices(self) -> int:
        return self.offset_w3.shape[0] // 2

    def arrays(self):
        """Ordered (name, array) pairs over the whole model."""
        for name in self.HEAD_FIELDS:
            yield name, getattr(self, name)
        for name, arr in self.evolution.arrays():
            yield f"evolution.{name}", arr

    @classmethod
    def from_arrays(cls, named: dict) -> "PipelineParams":
        head = {name: np.asarray(named[name], dtype=float) for name in cls.HEAD_FIELDS}
        evo_named = {
            name.split(".", 1)[1]: arr
            for name, arr in named.items()
            if name.startswith("evolution.")
        }
        return cls(**head, evolution=evo.EvolutionParams.from_arrays(evo_named))


def conv2d3x3(x, w, b):
    """Same-padded 3x3 convolution on an (H, W, C_in) grid."""
    h, wd, _ = x.shape
    cout = w.shape[0]
    padded = np.pad(x, ((1, 1), (1, 1), (0, 0)))
    out = np.tile(b, (h, wd, 1))
    for dy in range(3):
        for dx in range(3):
            out += padded[dy : dy + h, dx : dx + wd] @ w[:, :, dy, dx].T
    return out


def conv2d3x3_backward(x, w, d_out):
    h, wd, cin = x.shape
    cout = w.shape[0]
    padded = np.pad(x, ((1, 1), (1, 1), (0, 0)))
    d_padded = np.zeros_like(padded)
    d_w = np.zeros_like(w)
    flat_dout = d_out.reshape(-1, cout)
    for dy in range(3):
        for dx in range(3):
            patch = padded[dy : dy + h, dx : dx + wd]
            d_w[:, :, dy, dx] = flat_dout.T @ patch.reshape(-1, cin)
            d_padded[dy : dy + h, dx : dx + wd] += d_out @ w[:, :, dy, dx]
    return d_padded[1:-1, 1:-1], d_w, d_out.sum(axis=(0, 1))


def _sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def center_forward(grid, params: PipelineParams):
    """Feature grid -> keypoint heatmap in (0, 1); returns (heatmap, cache)."""
    z1 = conv2d3x3(grid, params.center_w1, params.center_b1)
    a1 = np.maximum(z1, 0.0)
    z2 = a1 @ params.center_w2.T + params.center_b2
    heat = _sigmoid(z2[..., 0])
    return heat, {"grid": grid, "z1": z1, "a1": a1, "heat": heat}


def center_backward(cache, params: PipelineParams, d_heat):
    heat = cache["heat"]
    d_z2 = (d_heat * heat * (1.0 - heat))[..., None]
    a1 = cache["a1"]
    grads = {
        "center_w2": d_z2.reshape(-1, 1).T @ a1.reshape(-1, a1.shape[-1]),
        "center_b2": d_z2.sum(axis=(0, 1)),
    }
    d_a1 = d_z2 @ params.center_w2
    d_z1 = d_a1 * (cache["z1"] > 0)
    _, d_w1, d_b1 = conv2d3x3_backward(cache["grid"], params.center_w1, d_z1)
    grads["center_w1"] = d_w1
    grads["center_b1"] = d_b1
    return grads


def offset_forward(grid, params: PipelineParams):
    """Feature grid -> (rows, cols, 2N) offset map; returns (map, cache)."""
    z1 = conv2d3x3(grid, params.offset_w1, params.offset_b1)
    a1 = np.maximum(z1, 0.0)
    z2 = conv2d3x3(a1, params.offset_w2, params.offset_b2)
    a2 = np.maximum(z2, 0.0)
    offmap = a2 @ params.offset_w3.T + params.offset_b3
    return offmap, {"grid": grid, "z1": z1, "a1": a1, "z2": z2, "a2": a2}


def offset_backward(cache, params: PipelineParams, d_offmap):
    a2 = cache["a2"]
    grads = {
        "offset_w3": d_offmap.reshape(-1, d_offmap.shape[-1]).T @ a2.reshape(-1, a2.shape[-1]),
        "offset_b3": d_offmap.sum(axis=(0, 1)),
    }
    d_a2 = d_offmap @ params.offset_w3
    d_z2 = d_a2 * (cache["z2"] > 0)
    d_a1, d_w2, d_b2 = conv2d3x3_backward(cache["a1"], params.offset_w2, d_z2)
    grads["offset_w2"] = d_w2
    grads["offset_b2"] = d_b2
    d_z1 = d_a1 * (cache["z1"] > 0)
    _, d_w1, d_b1 = conv2d3x3_backward(cache["grid"], params.offset_w1, d_z1)
    grads["offset_w1"] = d_w1
    grads["offset_b1"] = d_b1
    return grads


def save_checkpoint(params: PipelineParams, path, meta: dict | None = None):
    """Write a version-1 checkpoint; byte output is deterministic."""
    names = []
    buffers = []
    for name, arr in params.arrays():
        a = np.ascontiguousarray(arr, dtype="<f8")
        names.append({"name": name, "shape": list(a.shape)})
        buffers.append(a.tobytes())
    header = json.dumps({"arrays": names, "meta": meta or {}}, sort_keys=True)
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC + b"\n")
        fh.write(header.encode("utf-8") + b"\n")
        for buf in buffers:
            fh.write(buf)


def load_checkpoint(path):
    """Read a checkpoint; returns (PipelineParams, meta)."""
    with open(path, "rb") as fh:
        magic = fh.readline().strip()
        if magic != CHECKPOINT_MAGIC:
            raise ValueError(f"not a checkpoint file (magic {magic!r})")
        header = json.loads(fh.readline().decode("utf-8"))
        named = {}
        for entry in header["arrays"]:
            shape = tuple(entry["shape"])
            count = int(np.prod(shape)) if shape else 1
            buf = fh.read(count * 8)
            if len(buf) != count * 8:
                raise ValueError(f"checkpoint truncated at array {entry['name']!r}")
            named[entry["name"]] = np.frombuffer(buf, dtype="<f8").reshape(shape).copy()
    return PipelineParams.from_arrays(named), header.get("meta", {})


@dataclass
class ScenePrediction:
    """One detected building: evolved ring, vertex scores, detection score."""

    points: np.ndarray          # (N, 2)
    vertex_scores: np.ndarray   # (N,)
    score: float
    center: np.ndarray          # (2,)


def predict_scene(image, params: PipelineParams, cfg: RunConfig) -> list:
    """Detect centers, compose initial contours, evolve them.

    Returns predictions sorted by descending detection score (the decoding
    order), one per surviving heatmap peak.
    """
    grid = feature_provider(image)
    heat, _ = center_forward(grid, params)
    detections = decode_peaks(heat, cfg.peak_threshold, cfg.max_detections)
    if not detections:
        return []
    offmap, _ = offset_forward(grid, params)
    out = []
    for det in detections:
        row, col = det.cell
        vec = offmap[row, col].reshape(cfg.n_vertices, 2)
        contour = compose_initial_contour(det.position, vec, cfg.expansion_factor)
        state = evo.EvolutionState(contour)
        probs = np.full(cfg.n_vertices, 0.5)
        for _ in range(cfg.evolution_iterations):
            state, probs = evo.evolve_once(state, grid, params.evolution, cfg.evolution_iterations)
        out.append(ScenePrediction(state.contour.points, probs, det.score, det.position))
    return out
