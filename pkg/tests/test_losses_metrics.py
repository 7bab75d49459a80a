import math

import numpy as np
import pytest

from conftest import random_mask
from crackseg.errors import ConfigError, DataError
from crackseg.losses import dice_focal_loss, dice_loss, focal_loss
from crackseg.metrics import FpsMeter, aggregate, evaluate_mask, iou, report_from_counts

# frozen by hand: (1 - 0.5)^4 * -log(0.5)
FOCAL_HALF_POSITIVE = 0.0625 * math.log(2.0)


class TestFocalLoss:
    def test_perfect_prediction_is_zero(self):
        p = np.array([1.0, 0.0, 1.0])
        y = np.array([1, 0, 1])
        assert focal_loss(p, y, gamma=4.0) == 0.0

    def test_half_confidence_single_positive(self):
        loss = focal_loss(np.array([0.5]), np.array([1]), gamma=4.0)
        assert abs(loss - FOCAL_HALF_POSITIVE) < 1e-12
        assert abs(loss - 0.0433217) < 1e-6

    def test_gamma_zero_is_cross_entropy(self, rng):
        p = rng.uniform(0.05, 0.95, size=(8, 8))
        y = random_mask(rng, 8, 8)
        ce = -np.mean(np.log(np.where(y == 1, p, 1 - p)))
        assert abs(focal_loss(p, y, gamma=0.0) - ce) < 1e-12

    def test_nonnegative_and_decreasing_in_pt(self):
        losses = [focal_loss(np.array([pt]), np.array([1]), 4.0) for pt in (0.3, 0.5, 0.7, 0.9)]
        assert all(l >= 0 for l in losses)
        assert losses == sorted(losses, reverse=True)

    def test_higher_gamma_downweights_easy_pixels(self):
        p, y = np.array([0.8]), np.array([1])
        assert focal_loss(p, y, gamma=4.0) < focal_loss(p, y, gamma=2.0)

    def test_confident_miss_is_finite(self):
        assert math.isfinite(focal_loss(np.array([0.0]), np.array([1]), 4.0))

    def test_validation(self):
        with pytest.raises(DataError):
            focal_loss(np.array([0.5]), np.array([1, 0]))
        with pytest.raises(DataError):
            focal_loss(np.array([1.5]), np.array([1]))


class TestDiceLoss:
    def test_identical_masks(self, rng):
        g = random_mask(rng, 10, 10, density=0.4).astype(float)
        assert dice_loss(g, g) == 0.0

    def test_disjoint(self):
        p = np.array([1.0, 0.0])
        g = np.array([0.0, 1.0])
        assert abs(dice_loss(p, g) - 1.0) < 1e-6

    def test_partial_overlap_one_third(self):
        loss = dice_loss(np.array([1.0, 0.0]), np.array([1.0, 1.0]))
        assert abs(loss - 1.0 / 3.0) < 1e-6

    def test_empty_vs_empty_is_zero(self):
        assert dice_loss(np.zeros(4), np.zeros(4)) == 0.0

    def test_symmetric_for_binary(self, rng):
        p = random_mask(rng, 8, 8).astype(float)
        g = random_mask(rng, 8, 8).astype(float)
        assert abs(dice_loss(p, g) - dice_loss(g, p)) < 1e-12

    def test_range(self, rng):
        for _ in range(20):
            p = rng.uniform(0, 1, size=(6, 6))
            g = random_mask(rng, 6, 6).astype(float)
            assert -1e-9 <= dice_loss(p, g) <= 1.0 + 1e-6


class TestDiceFocal:
    def test_perfect_prediction(self):
        p = np.array([1.0, 0.0])
        y = np.array([1.0, 0.0])
        assert dice_focal_loss(p, y) == 0.0

    def test_degenerate_weights(self, rng):
        p = rng.uniform(0.05, 0.95, size=(5, 5))
        y = random_mask(rng, 5, 5).astype(float)
        assert dice_focal_loss(p, y, 1.0, 0.0) == pytest.approx(dice_loss(p, y))
        assert dice_focal_loss(p, y, 0.0, 1.0, gamma=4.0) == pytest.approx(
            focal_loss(p, y, 4.0)
        )

    def test_weighted_sum_arithmetic(self):
        p = np.array([0.5, 1.0])
        y = np.array([1.0, 1.0])
        expected = 0.8 * dice_loss(p, y) + 0.2 * focal_loss(p, y, 4.0)
        assert dice_focal_loss(p, y) == pytest.approx(expected, abs=1e-12)


class TestEvaluateMask:
    def test_perfect(self, rng):
        g = random_mask(rng, 10, 10, density=0.5)
        g[0, 0] = 1  # nonempty
        r = evaluate_mask(g, g)
        assert (r.precision, r.recall, r.iou, r.dice) == (1.0, 1.0, 1.0, 1.0)

    def test_empty_prediction_nonempty_gt(self):
        pred = np.zeros((4, 4), np.uint8)
        gt = np.ones((4, 4), np.uint8)
        r = evaluate_mask(pred, gt)
        assert (r.precision, r.recall, r.iou, r.dice) == (0.0, 0.0, 0.0, 0.0)

    def test_half_coverage(self):
        gt = np.zeros((2, 4), np.uint8)
        gt[0] = 1
        pred = np.zeros_like(gt)
        pred[0, :2] = 1
        r = evaluate_mask(pred, gt)
        assert r.precision == 1.0
        assert r.recall == 0.5
        assert r.iou == 0.5
        assert r.dice == pytest.approx(2.0 / 3.0)

    def test_counts_partition_pixels(self, rng):
        pred = random_mask(rng, 9, 9)
        gt = random_mask(rng, 9, 9)
        r = evaluate_mask(pred, gt)
        assert r.tp + r.fp + r.fn + r.tn == 81

    def test_dice_iou_identity_on_random_pairs(self, rng):
        for _ in range(200):
            pred = random_mask(rng, 16, 16)
            gt = random_mask(rng, 16, 16)
            r = evaluate_mask(pred, gt)
            assert r.dice == pytest.approx(2 * r.iou / (1 + r.iou), abs=1e-12)

    def test_iou_helper_consistent(self, rng):
        pred = random_mask(rng, 12, 12)
        gt = random_mask(rng, 12, 12)
        assert iou(pred, gt) == pytest.approx(evaluate_mask(pred, gt).iou)

    def test_mismatch(self):
        with pytest.raises(DataError):
            evaluate_mask(np.zeros((2, 2), np.uint8), np.zeros((3, 3), np.uint8))


class TestAggregation:
    def test_image_mean_is_plain_mean(self):
        rows = [report_from_counts(10, 0, 0, 10), report_from_counts(5, 5, 5, 5)]
        agg = aggregate(rows, "image-mean")
        assert agg["dice"] == pytest.approx((1.0 + 2 * 5 / (2 * 5 + 5 + 5)) / 2)

    def test_pixel_pooled_sums_counts(self):
        rows = [report_from_counts(10, 0, 0, 10), report_from_counts(0, 10, 10, 0)]
        agg = aggregate(rows, "pixel-pooled")
        assert agg["precision"] == pytest.approx(10 / 20)
        assert agg["iou"] == pytest.approx(10 / 30)

    def test_empty_and_bad_mode(self):
        with pytest.raises(DataError):
            aggregate([], "image-mean")
        with pytest.raises(ConfigError):
            aggregate([report_from_counts(1, 0, 0, 0)], "median")


class TestFpsMeter:
    def test_stage_fps(self):
        meter = FpsMeter()
        for _ in range(10):
            meter.add("decode", 0.2)
            meter.frame_done()
        assert meter.fps("decode") == pytest.approx(5.0)

    def test_total_fps_from_window(self):
        meter = FpsMeter()
        meter.frames = 1
        meter._t0 = 0.0
        meter._t_end = 0.5
        assert meter.fps() == pytest.approx(2.0)

    def test_zero_frames_error(self):
        with pytest.raises(DataError):
            FpsMeter().fps()

    def test_report_contains_stages(self):
        meter = FpsMeter()
        meter.add("detect", 0.1)
        meter.add("encode", 0.1)
        meter.frame_done()
        d = meter.as_dict()
        assert set(d["stages"]) == {"detect", "encode"}
        assert d["frames"] == 1
