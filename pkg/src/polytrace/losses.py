"""Training objectives with analytic gradients.

Every loss returns a :class:`LossValue` carrying the scalar and the partial
derivatives with respect to its continuous inputs, keyed by input name.
Discrete selections (Hungarian matches, nearest-point indices) are treated
as constants inside a step's gradient; they are recomputed between steps,
which is what makes the vertex pairing dynamic at step granularity.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .assignment import Assignment, nearest_point_indices
from .geometry import DensifiedContour, densify_x10

PROB_EPS = 1e-7


@dataclass
class LossValue:
    """Scalar objective plus per-input gradients (same shapes as the inputs)."""

    value: float
    grads: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if not np.isfinite(self.value):
            raise ValueError("loss value must be finite")


def _clamped_log(p):
    return np.log(np.clip(p, PROB_EPS, 1.0 - PROB_EPS))


def focal_center_loss(pred_heatmap, target_heatmap, alpha: float = 2.0, beta: float = 4.0) -> LossValue:
    """Penalty-reduced focal loss for the center-point heatmap.

    Pixels where the target is exactly 1 are keypoints; the sum is averaged
    by the keypoint count. Gradient key: ``heatmap``.
    """
    pred = np.asarray(pred_heatmap, dtype=float)
    target = np.asarray(target_heatmap, dtype=float)
    if pred.shape != target.shape:
        raise ValueError("heatmap shapes differ")
    pos = target == 1.0
    n_key = int(pos.sum())
    if n_key == 0:
        raise ValueError("target heatmap has no keypoints")
    p = np.clip(pred, PROB_EPS, 1.0 - PROB_EPS)
    log_p = np.log(p)
    log_1p = np.log(1.0 - p)

    pos_term = (1.0 - p) ** alpha * log_p
    neg_term = (1.0 - target) ** beta * p**alpha * log_1p
    value = -float(np.where(pos, pos_term, neg_term).sum()) / n_key

    d_pos = alpha * (1.0 - p) ** (alpha - 1) * log_p - (1.0 - p) ** alpha / p
    d_neg = (1.0 - target) ** beta * (alpha * p ** (alpha - 1) * log_1p - p**alpha / (1.0 - p))
    grad = np.where(pos, d_pos, -d_neg) / n_key
    grad = np.where((pred > PROB_EPS) & (pred < 1.0 - PROB_EPS), grad, 0.0)
    return LossValue(value, {"heatmap": grad})


def smooth_l1(pred_points, gt_points) -> LossValue:
    """Mean smooth-L1 over vertices, summed over x and y per vertex.

    Per coordinate: 0.5 x^2 for |x| < 1, |x| - 0.5 otherwise. Gradient key:
    ``pred``.
    """
    pred = np.asarray(pred_points, dtype=float)
    gt = np.asarray(gt_points, dtype=float)
    if pred.shape != gt.shape:
        raise ValueError(f"point counts differ: {pred.shape} vs {gt.shape}")
    n = pred.shape[0]
    diff = pred - gt
    a = np.abs(diff)
    per_coord = np.where(a < 1.0, 0.5 * diff**2, a - 0.5)
    grad = np.where(a < 1.0, diff, np.sign(diff)) / n
    return LossValue(float(per_coord.sum()) / n, {"pred": grad})


def classification_loss(valid_probs, assignment: Assignment, invalid_weight: float = 0.1) -> LossValue:
    """Negative log-likelihood of the matched/unmatched vertex labels.

    Matched vertices contribute -log(c); unmatched ones contribute
    ``invalid_weight * -log(1 - c)`` to counter the class imbalance.
    Gradient key: ``probs``.
    """
    c = np.asarray(valid_probs, dtype=float)
    n = c.shape[0]
    matched = assignment.matched_columns()
    unmatched = assignment.unmatched_columns(n)
    value = float(-_clamped_log(c[matched]).sum())
    value += invalid_weight * float(-_clamped_log(1.0 - c[unmatched]).sum())

    grad = np.zeros(n)
    interior = (c > PROB_EPS) & (c < 1.0 - PROB_EPS)
    grad[matched] = np.where(interior[matched], -1.0 / np.clip(c[matched], PROB_EPS, None), 0.0)
    grad[unmatched] = np.where(
        interior[unmatched],
        invalid_weight / np.clip(1.0 - c[unmatched], PROB_EPS, None),
        0.0,
    )
    return LossValue(value, {"probs": grad})


def dml(
    pred,
    gt: DensifiedContour,
    gt_corners,
    assignment: Assignment,
    nearest: np.ndarray | None = None,
) -> LossValue:
    """Dynamic matching loss: boundary attraction plus corner attraction.

    The first term is the mean L1 distance from each predicted vertex to its
    nearest point (by L2) on the 10x-densified ground-truth ring; the second
    is the mean L1 distance from each matched predicted vertex to its corner.
    ``nearest`` lets callers freeze the nearest-point selection; gradients
    always treat both selections as constants. Gradient key: ``pred``.
    """
    pred_pts = pred.points if isinstance(pred, DensifiedContour) else np.asarray(pred, dtype=float)
    n = pred_pts.shape[0]
    corners = np.asarray(gt_corners, dtype=float)
    m = corners.shape[0]
    dense_gt = densify_x10(gt)
    if nearest is None:
        nearest = nearest_point_indices(pred_pts, dense_gt)
    targets = dense_gt[nearest]

    diff_b = pred_pts - targets
    pre2gt = float(np.abs(diff_b).sum()) / n
    grad = np.sign(diff_b) / n

    sigma = assignment.matched_columns()
    if sigma.size != m:
        raise ValueError("assignment size does not match corner count")
    diff_c = pred_pts[sigma] - corners
    gt2pre = float(np.abs(diff_c).sum()) / m
    np.add.at(grad, sigma, np.sign(diff_c) / m)

    return LossValue(pre2gt + gt2pre, {"pred": grad})


def total_loss(l_ct, l_init, l_e1, l_e2, l_cla, epsilon: float = 1.0 / 3.0) -> LossValue:
    """Multi-task combination: ct + epsilon*(init + e1 + e2) + cla.

    Component gradients are scaled by their weights and namespaced by the
    component name (``ct.heatmap``, ``init.pred``, ...).
    """
    parts = {"ct": (l_ct, 1.0), "init": (l_init, epsilon), "e1": (l_e1, epsilon), "e2": (l_e2, epsilon), "cla": (l_cla, 1.0)}
    value = 0.0
    grads: dict[str, np.ndarray] = {}
    for name, (part, weight) in parts.items():
        value += weight * part.value
        for key, g in part.grads.items():
            grads[f"{name}.{key}"] = weight * g
    return LossValue(value, grads)
