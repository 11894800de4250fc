import math

import numpy as np
import pytest

from polytrace import losses
from polytrace.assignment import Assignment, nearest_point_indices
from polytrace.geometry import DensifiedContour, densify, densify_x10

from conftest import central_difference, relative_error

SQUARE = np.array([[10.0, 10.0], [30.0, 10.0], [30.0, 30.0], [10.0, 30.0]])


def square_ring_contour():
    """The square itself as a 4-point anchored ring (corners are the vertices)."""
    return DensifiedContour(SQUARE, np.arange(4))


class TestFocalCenterLoss:
    def test_perfect_prediction_is_zero(self):
        target = np.zeros((8, 8))
        target[2, 3] = 1.0
        pred = np.where(target == 1.0, 1.0 - 1e-7, 1e-7)
        out = losses.focal_center_loss(pred, target)
        assert out.value == pytest.approx(0.0, abs=1e-12)

    def test_single_keypoint_half_confidence(self):
        target = np.zeros((4, 4))
        target[1, 1] = 1.0
        pred = np.full((4, 4), 1e-7)
        pred[1, 1] = 0.5
        out = losses.focal_center_loss(pred, target)
        assert out.value == pytest.approx(-0.25 * math.log(0.5), abs=1e-9)

    def test_gradient_matches_finite_differences(self, rng):
        for _ in range(10):
            target = rng.uniform(0.0, 0.9, size=(6, 6))
            target[tuple(rng.integers(0, 6, size=2))] = 1.0
            pred = rng.uniform(0.05, 0.95, size=(6, 6))
            out = losses.focal_center_loss(pred, target)
            fd = central_difference(lambda p: losses.focal_center_loss(p, target).value, pred)
            assert relative_error(out.grads["heatmap"], fd) < 1e-6

    def test_no_keypoints_rejected(self):
        with pytest.raises(ValueError):
            losses.focal_center_loss(np.full((3, 3), 0.5), np.zeros((3, 3)))


class TestSmoothL1:
    def test_equal_points_zero(self):
        pts = np.array([[1.0, 2.0], [3.0, 4.0]])
        assert losses.smooth_l1(pts, pts).value == 0.0

    def test_small_offset_quadratic(self):
        out = losses.smooth_l1(np.array([[0.5, 0.0]]), np.array([[0.0, 0.0]]))
        assert out.value == pytest.approx(0.125)

    def test_large_offset_linear(self):
        out = losses.smooth_l1(np.array([[2.0, 0.0]]), np.array([[0.0, 0.0]]))
        assert out.value == pytest.approx(1.5)

    def test_gradient_matches_finite_differences(self, rng):
        for _ in range(10):
            gt = rng.uniform(0, 20, size=(12, 2))
            offsets = rng.normal(scale=1.5, size=(12, 2))
            offsets = offsets[np.newaxis].squeeze(0)
            # keep clear of the |x| = 1 kink
            offsets[np.abs(np.abs(offsets) - 1.0) < 1e-3] += 0.01
            pred = gt + offsets
            out = losses.smooth_l1(pred, gt)
            fd = central_difference(lambda p: losses.smooth_l1(p, gt).value, pred)
            assert relative_error(out.grads["pred"], fd) < 1e-6

    def test_length_mismatch_rejected(self):
        with pytest.raises(ValueError):
            losses.smooth_l1(np.zeros((3, 2)), np.zeros((4, 2)))


class TestClassificationLoss:
    def test_perfect_classification_is_zero(self):
        probs = np.array([1.0, 0.0, 1.0, 0.0])
        out = losses.classification_loss(probs, Assignment(np.array([0, 2])))
        assert out.value == pytest.approx(0.0, abs=1e-5)

    def test_single_matched_half_confidence(self):
        out = losses.classification_loss(np.array([0.5]), Assignment(np.array([0])))
        assert out.value == pytest.approx(-math.log(0.5))

    def test_invalid_weight_applied(self):
        probs = np.array([1.0, 0.5])
        out = losses.classification_loss(probs, Assignment(np.array([0])))
        assert out.value == pytest.approx(0.1 * -math.log(0.5), abs=1e-6)

    def test_gradient_matches_finite_differences(self, rng):
        for _ in range(10):
            n = 12
            probs = rng.uniform(0.05, 0.95, size=n)
            sigma = rng.choice(n, size=4, replace=False)
            a = Assignment(sigma)
            out = losses.classification_loss(probs, a)
            fd = central_difference(lambda p: losses.classification_loss(p, a).value, probs)
            assert relative_error(out.grads["probs"], fd) < 1e-6


class TestDml:
    def test_zero_at_perfect_prediction(self):
        gt = square_ring_contour()
        a = Assignment(np.arange(4))
        out = losses.dml(gt.points.copy(), gt, SQUARE, a)
        assert out.value == 0.0

    def test_displaced_square_matches_bruteforce_oracle(self):
        gt = square_ring_contour()
        pred = gt.points + np.array([1.0, 0.0])
        dense = densify_x10(gt)
        assert dense.shape == (40, 2)
        # oracle: exhaustive nearest search and plain arithmetic
        expected_pre2gt = 0.0
        for p in pred:
            d2 = np.linalg.norm(dense - p, axis=1)
            nearest = dense[np.argmin(d2)]
            expected_pre2gt += np.abs(p - nearest).sum()
        expected_pre2gt /= pred.shape[0]
        a = Assignment(np.arange(4))
        expected_gt2pre = np.abs(pred - SQUARE).sum() / 4
        out = losses.dml(pred, gt, SQUARE, a)
        assert out.value == pytest.approx(expected_pre2gt + expected_gt2pre)

    def test_on_boundary_vertex_contributes_nothing(self):
        gt = square_ring_contour()
        # exactly on a 10x subdivision point of the top edge, between corners
        pred = gt.points.copy()
        pred[0] = [16.0, 10.0]
        a = Assignment(np.array([1, 2, 3, 0]))
        dense = densify_x10(gt)
        nearest = nearest_point_indices(pred, dense)
        assert np.abs(pred[0] - dense[nearest[0]]).sum() < 1e-9

    def test_translation_invariance(self, rng):
        gt = densify(SQUARE, 16)
        pred = gt.points + rng.normal(scale=1.0, size=(16, 2))
        a = Assignment(rng.choice(16, size=4, replace=False))
        base = losses.dml(pred, gt, SQUARE, a).value
        shift = np.array([31.7, -8.25])
        gt_shifted = DensifiedContour(gt.points + shift, gt.anchor_indices)
        moved = losses.dml(pred + shift, gt_shifted, SQUARE + shift, a).value
        assert moved == pytest.approx(base, abs=1e-9)

    def test_boundary_term_decreases_along_approach(self):
        gt = square_ring_contour()
        pred = gt.points.copy()
        pred[0] = [50.0, 5.0]
        dense = densify_x10(gt)
        nearest = nearest_point_indices(pred, dense)
        a = Assignment(np.array([1, 2, 3, 0]))
        target = dense[nearest[0]]
        values = []
        for frac in np.linspace(0.0, 0.9, 10):
            moved = pred.copy()
            moved[0] = pred[0] + frac * (target - pred[0])
            values.append(losses.dml(moved, gt, SQUARE, a, nearest=nearest).value)
        assert all(b < a for a, b in zip(values, values[1:]))

    def test_gradient_matches_finite_differences(self, rng):
        gt = densify(SQUARE, 16)
        for _ in range(10):
            pred = gt.points + rng.normal(scale=1.3, size=(16, 2))
            a = Assignment(rng.choice(16, size=4, replace=False))
            nearest = nearest_point_indices(pred, densify_x10(gt))
            out = losses.dml(pred, gt, SQUARE, a, nearest=nearest)
            fd = central_difference(
                lambda p: losses.dml(p, gt, SQUARE, a, nearest=nearest).value, pred
            )
            assert relative_error(out.grads["pred"], fd) < 1e-6


class TestTotalLoss:
    def test_all_zero(self):
        zero = losses.LossValue(0.0, {})
        assert losses.total_loss(zero, zero, zero, zero, zero).value == 0.0

    def test_weighted_combination(self):
        mk = lambda v: losses.LossValue(v, {})
        out = losses.total_loss(mk(3.0), mk(3.0), mk(3.0), mk(3.0), mk(1.0))
        assert out.value == pytest.approx(7.0)

    def test_linearity_and_gradient_scaling(self):
        g = np.array([1.0, -2.0])
        mk = lambda v: losses.LossValue(v, {"x": g * v})
        one = losses.total_loss(mk(1.0), mk(1.0), mk(1.0), mk(1.0), mk(1.0))
        two = losses.total_loss(mk(2.0), mk(2.0), mk(2.0), mk(2.0), mk(2.0))
        assert two.value == pytest.approx(2 * one.value)
        assert np.allclose(two.grads["init.x"], 2 * one.grads["init.x"])
        assert np.allclose(one.grads["init.x"], g / 3.0)
        assert np.allclose(one.grads["cla.x"], g)
