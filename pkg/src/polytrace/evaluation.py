"""Mask and boundary IoU, averaged precision, size splits and the
manual-delineation-level statistics.

All metrics are raster-based: polygons are rasterized with the pixel-center
even-odd rule, boundary bands use Chebyshev distance to the mask's boundary
pixels, so every value is reproducible bit-for-bit and checkable against a
per-pixel oracle.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .geometry import expand_mask, rasterize

IOU_THRESHOLDS = np.array([0.50, 0.55, 0.60, 0.65, 0.70, 0.75, 0.80, 0.85, 0.90, 0.95])
SIZE_SPLIT_PIXELS = 7500
SMALL_MEDIUM = "S&M"
LARGE = "L"


@dataclass(frozen=True)
class InstancePrediction:
    polygon: np.ndarray
    score: float
    image_id: int = 0

    def __post_init__(self):
        object.__setattr__(self, "polygon", np.asarray(self.polygon, dtype=float))
        if not 0.0 <= self.score <= 1.0:
            raise ValueError("prediction score must be a probability")


@dataclass(frozen=True)
class GroundTruth:
    polygon: np.ndarray
    image_id: int = 0

    def __post_init__(self):
        object.__setattr__(self, "polygon", np.asarray(self.polygon, dtype=float))


def mask_iou(a, b, frame_dims) -> float:
    """Intersection over union of the rasterized polygons; 0 on empty union."""
    width, height = frame_dims
    ma = rasterize(a, width, height)
    mb = rasterize(b, width, height)
    return masks_iou(ma, mb)


def masks_iou(ma, mb) -> float:
    union = int(np.count_nonzero(ma | mb))
    if union == 0:
        return 0.0
    return int(np.count_nonzero(ma & mb)) / union


def boundary_band(mask, d: int) -> np.ndarray:
    """Mask pixels within Chebyshev distance d of the mask's boundary.

    Boundary pixels are mask pixels with a non-mask 8-neighbor (frame edges
    count as outside).
    """
    m = np.asarray(mask, dtype=bool)
    if not m.any():
        return m.copy()
    interior = ndimage.binary_erosion(m, structure=np.ones((3, 3), dtype=bool), border_value=0)
    boundary = m & ~interior
    return m & expand_mask(boundary, d)


def boundary_distance(frame_dims, d_fraction: float = 0.01) -> int:
    width, height = frame_dims
    return max(1, int(round(d_fraction * float(np.hypot(width, height)))))


def boundary_iou(a, b, frame_dims, d_fraction: float = 0.01) -> float:
    """IoU restricted to the bands within distance d of each mask's boundary,
    with d a fraction of the frame diagonal (at least one pixel)."""
    width, height = frame_dims
    d = boundary_distance(frame_dims, d_fraction)
    band_a = boundary_band(rasterize(a, width, height), d)
    band_b = boundary_band(rasterize(b, width, height), d)
    return masks_iou(band_a, band_b)


@dataclass
class MatchResult:
    pairs: list  # (pred_index, gt_index, iou)
    unmatched_preds: list
    unmatched_gts: list

    @property
    def true_positives(self) -> int:
        return len(self.pairs)

    @property
    def false_positives(self) -> int:
        return len(self.unmatched_preds)

    @property
    def false_negatives(self) -> int:
        return len(self.unmatched_gts)


def match_instances(preds, gts, iou_fn, threshold: float) -> MatchResult:
    """Greedy score-ordered matching with the single-match rule.

    Predictions in descending score order (ties by input order) claim the
    not-yet-matched ground truth of the same image with the highest IoU at
    or above the threshold; IoU ties go to the lower ground-truth index.
    """
    order = sorted(range(len(preds)), key=lambda i: (-preds[i].score, i))
    gt_taken = [False] * len(gts)
    pairs = []
    unmatched_preds = []
    for pi in order:
        pred = preds[pi]
        best_iou, best_gt = 0.0, -1
        for gi, gt in enumerate(gts):
            if gt_taken[gi] or gt.image_id != pred.image_id:
                continue
            iou = iou_fn(pred, gt)
            if iou >= threshold and iou > best_iou:
                best_iou, best_gt = iou, gi
        if best_gt >= 0:
            gt_taken[best_gt] = True
            pairs.append((pi, best_gt, best_iou))
        else:
            unmatched_preds.append(pi)
    unmatched_gts = [gi for gi, taken in enumerate(gt_taken) if not taken]
    return MatchResult(pairs, unmatched_preds, unmatched_gts)


def average_precision(preds, gts, iou_fn, interpolated: bool = False) -> float:
    """Mean precision over the ten IoU thresholds 0.50 .. 0.95.

    Default reading: precision = TP / (TP + FP) over all predictions at each
    threshold, zero when there are no predictions. With ``interpolated`` the
    standard 101-point interpolated PR integral is used instead.
    """
    if len(gts) == 0:
        raise ValueError("average precision needs at least one ground truth")
    values = []
    for thr in IOU_THRESHOLDS:
        if interpolated:
            values.append(_interpolated_ap(preds, gts, iou_fn, float(thr)))
        else:
            if len(preds) == 0:
                values.append(0.0)
                continue
            result = match_instances(preds, gts, iou_fn, float(thr))
            values.append(result.true_positives / len(preds))
    return float(np.mean(values))


def _interpolated_ap(preds, gts, iou_fn, threshold):
    if len(preds) == 0:
        return 0.0
    result = match_instances(preds, gts, iou_fn, threshold)
    order = sorted(range(len(preds)), key=lambda i: (-preds[i].score, i))
    matched = {pi for pi, _, _ in result.pairs}
    flags = np.array([pi in matched for pi in order])
    tp = np.cumsum(flags)
    fp = np.cumsum(~flags)
    recall = tp / len(gts)
    precision = tp / np.maximum(tp + fp, 1)
    for i in range(precision.size - 1, 0, -1):
        precision[i - 1] = max(precision[i - 1], precision[i])
    rec_points = np.linspace(0.0, 1.0, 101)
    idx = np.searchsorted(recall, rec_points, side="left")
    sampled = np.where(idx < recall.size, precision[np.minimum(idx, recall.size - 1)], 0.0)
    return float(sampled.mean())


def size_split(gt_polygon, frame_dims) -> str:
    """Rasterized area below 7500 pixels is small-and-medium, the rest large."""
    width, height = frame_dims
    area = int(np.count_nonzero(rasterize(gt_polygon, width, height)))
    return SMALL_MEDIUM if area < SIZE_SPLIT_PIXELS else LARGE


def manual_level_threshold(gt_polygon, r: int, frame_dims) -> float:
    """Instance-level IoU threshold from expanding the ground truth by r pixels.

    The expansion is a superset of the mask, so the IoU reduces to
    |mask| / |expanded mask|.
    """
    if r not in (2, 3):
        raise ValueError("manual-level expansion must be 2 or 3 pixels")
    width, height = frame_dims
    mask = rasterize(gt_polygon, width, height)
    area = int(np.count_nonzero(mask))
    if area == 0:
        return 0.0
    expanded = int(np.count_nonzero(expand_mask(mask, r)))
    return area / expanded


def manual_level_rate(preds, gts, r: int, frame_fn) -> float:
    """Fraction of ground truths whose matched prediction clears the
    instance-level threshold; unmatched ground truths count as failures."""
    if len(gts) == 0:
        raise ValueError("manual-level rate needs at least one ground truth")
    iou_fn = _cached_mask_iou(frame_fn)
    result = match_instances(preds, gts, iou_fn, 0.5)
    hits = 0
    for _, gi, iou in result.pairs:
        threshold = manual_level_threshold(gts[gi].polygon, r, frame_fn(gts[gi].image_id))
        if iou > threshold:
            hits += 1
    return hits / len(gts)


def _as_frame_fn(frame_dims):
    if callable(frame_dims):
        return frame_dims
    if isinstance(frame_dims, dict):
        return lambda image_id: frame_dims[image_id]
    return lambda image_id: frame_dims


def _cached_mask_iou(frame_fn, band: bool = False):
    cache: dict[int, np.ndarray] = {}

    def mask_of(obj):
        key = id(obj)
        if key not in cache:
            width, height = frame_fn(obj.image_id)
            m = rasterize(obj.polygon, width, height)
            if band:
                m = boundary_band(m, boundary_distance((width, height)))
            cache[key] = m
        return cache[key]

    def iou(pred, gt):
        return masks_iou(mask_of(pred), mask_of(gt))

    return iou


@dataclass
class EvalReport:
    """Aggregate metric report; every metric lies in [0, 1]."""

    ap_msk: float
    ap_bdy: float
    ap_msk_sm: float
    ap_msk_l: float
    ap_bdy_sm: float
    ap_bdy_l: float
    manual_level_2px: float
    manual_level_3px: float
    mean_instance_iou: float
    thresholds: list = field(default_factory=lambda: [float(t) for t in IOU_THRESHOLDS])
    precision_mask: list = field(default_factory=list)
    precision_boundary: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "ap_msk": self.ap_msk,
            "ap_bdy": self.ap_bdy,
            "ap_msk_sm": self.ap_msk_sm,
            "ap_msk_l": self.ap_msk_l,
            "ap_bdy_sm": self.ap_bdy_sm,
            "ap_bdy_l": self.ap_bdy_l,
            "manual_level_2px": self.manual_level_2px,
            "manual_level_3px": self.manual_level_3px,
            "mean_instance_iou": self.mean_instance_iou,
            "thresholds": self.thresholds,
            "precision_mask": self.precision_mask,
            "precision_boundary": self.precision_boundary,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "EvalReport":
        return cls(**data)

    def format_table(self) -> str:
        head = f"{'':14s}{'AP':>8s}{'AP_S&M':>8s}{'AP_L':>8s}"
        rows = [
            head,
            f"{'mask':14s}{self.ap_msk:8.4f}{self.ap_msk_sm:8.4f}{self.ap_msk_l:8.4f}",
            f"{'boundary':14s}{self.ap_bdy:8.4f}{self.ap_bdy_sm:8.4f}{self.ap_bdy_l:8.4f}",
            "",
            f"{'manual level':14s}{'2px':>8s}{'3px':>8s}",
            f"{'':14s}{self.manual_level_2px:8.4f}{self.manual_level_3px:8.4f}",
            "",
            f"{'mean IoU':14s}{self.mean_instance_iou:8.4f}",
            "",
            "threshold  precision(mask)  precision(boundary)",
        ]
        for thr, pm, pb in zip(self.thresholds, self.precision_mask, self.precision_boundary):
            rows.append(f"{thr:9.2f}{pm:17.4f}{pb:21.4f}")
        return "\n".join(rows) + "\n"


def evaluate(preds, gts, frame_dims) -> EvalReport:
    """Populate the full report for a prediction set against ground truths.

    ``frame_dims`` is a (width, height) pair, a mapping from image id to
    such pairs, or a callable image_id -> (width, height).
    """
    if len(gts) == 0:
        raise ValueError("evaluation needs at least one ground truth")
    frame_fn = _as_frame_fn(frame_dims)
    iou_mask = _cached_mask_iou(frame_fn)
    iou_band = _cached_mask_iou(frame_fn, band=True)

    ap_msk = average_precision(preds, gts, iou_mask)
    ap_bdy = average_precision(preds, gts, iou_band)

    classes = [size_split(gt.polygon, frame_fn(gt.image_id)) for gt in gts]
    splits = {}
    for label in (SMALL_MEDIUM, LARGE):
        split_gts = [gt for gt, c in zip(gts, classes) if c == label]
        splits[label] = {
            "mask": _split_ap(preds, gts, classes, label, iou_mask),
            "boundary": _split_ap(preds, gts, classes, label, iou_band),
        }

    precision_mask = _precision_per_threshold(preds, gts, iou_mask)
    precision_boundary = _precision_per_threshold(preds, gts, iou_band)

    matches = match_instances(preds, gts, iou_mask, 0.5)
    per_gt_iou = np.zeros(len(gts))
    for _, gi, iou in matches.pairs:
        per_gt_iou[gi] = iou

    return EvalReport(
        ap_msk=ap_msk,
        ap_bdy=ap_bdy,
        ap_msk_sm=splits[SMALL_MEDIUM]["mask"],
        ap_msk_l=splits[LARGE]["mask"],
        ap_bdy_sm=splits[SMALL_MEDIUM]["boundary"],
        ap_bdy_l=splits[LARGE]["boundary"],
        manual_level_2px=manual_level_rate(preds, gts, 2, frame_fn),
        manual_level_3px=manual_level_rate(preds, gts, 3, frame_fn),
        mean_instance_iou=float(per_gt_iou.mean()),
        precision_mask=precision_mask,
        precision_boundary=precision_boundary,
    )


def _precision_per_threshold(preds, gts, iou_fn):
    out = []
    for thr in IOU_THRESHOLDS:
        if len(preds) == 0:
            out.append(0.0)
            continue
        result = match_instances(preds, gts, iou_fn, float(thr))
        out.append(result.true_positives / len(preds))
    return out


def _split_ap(preds, gts, classes, label, iou_fn):
    """AP restricted to one size class.

    At each threshold, predictions matched to a ground truth of the other
    class are set aside; precision is TP(class) / (TP(class) + unmatched).
    A class with no ground truths reports 0.
    """
    if label not in classes:
        return 0.0
    values = []
    for thr in IOU_THRESHOLDS:
        if len(preds) == 0:
            values.append(0.0)
            continue
        result = match_instances(preds, gts, iou_fn, float(thr))
        tp = sum(1 for _, gi, _ in result.pairs if classes[gi] == label)
        fp = result.false_positives
        values.append(tp / (tp + fp) if tp + fp else 0.0)
    return float(np.mean(values))
