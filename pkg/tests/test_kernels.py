import csv

import numpy as np
import pytest

from conftest import random_mask, write_toy_kernel_predictor
from crackseg.errors import BackendError, ConfigError, DataError
from crackseg.imgproc import erode, make_elliptical_kernel
from crackseg.kernels import (
    DEFAULT_CANDIDATES,
    FixedKernelSelector,
    HeuristicKernelSelector,
    KernelScoreSet,
    LearnedKernelSelector,
    OracleKernelSelector,
    candidate_set,
    export_training_targets,
    heuristic_selector,
    huber_loss,
    oracle_selector,
    score_kernels,
    training_target,
)
from crackseg.refine import auto_kernel_size


def raw_iou(a, b):
    a, b = a.astype(bool), b.astype(bool)
    union = np.count_nonzero(a | b)
    return np.count_nonzero(a & b) / union if union else 0.0


class TestCandidateSet:
    def test_default_fifteen(self):
        k = candidate_set(15)
        assert k.values == tuple(range(3, 32, 2))
        assert len(k.values) == 15
        assert k.max == 31

    def test_small_sets(self):
        assert candidate_set(1).values == (3,)
        assert candidate_set(3).values == (3, 5, 7)

    def test_invalid(self):
        with pytest.raises(ConfigError):
            candidate_set(0)


class TestScoreKernels:
    def test_constant_refine_fn_all_equal(self, rng):
        ref = random_mask(rng, 10, 10)
        scores = score_kernels(lambda m, k: ref, ref, ref, candidate_set(5))
        assert len(set(scores.scores)) == 1

    def test_exact_match_scores_one(self, rng):
        ref = random_mask(rng, 10, 10)
        ref[0, 0] = 1
        empty = np.zeros_like(ref)

        def fn(m, k):
            return ref if k == 7 else empty

        scores = score_kernels(fn, ref, ref, candidate_set(5))
        assert scores.scores[2] == 1.0
        assert int(np.argmax(scores.scores)) == 2

    def test_hand_computed_three_candidates(self):
        ref = np.array([[1, 1, 0, 0]], dtype=np.uint8)
        outs = {
            3: np.array([[1, 1, 0, 0]], dtype=np.uint8),  # iou 1
            5: np.array([[1, 0, 0, 0]], dtype=np.uint8),  # iou 1/2
            7: np.array([[1, 1, 1, 0]], dtype=np.uint8),  # iou 2/3
        }
        scores = score_kernels(lambda m, k: outs[k], ref, ref, candidate_set(3))
        assert scores.scores == pytest.approx((1.0, 0.5, 2.0 / 3.0))

    def test_failure_tagged_with_kernel(self, rng):
        def fn(m, k):
            raise ValueError("boom")

        with pytest.raises(BackendError, match="kernel 3"):
            score_kernels(fn, random_mask(rng, 4, 4), random_mask(rng, 4, 4), candidate_set(2))


class TestTrainingTarget:
    def test_argmax(self):
        s = KernelScoreSet(scores=(0.2, 0.9, 0.5), reference_is_ground_truth=True)
        assert training_target(s, candidate_set(3)) == 5

    def test_tie_picks_smallest(self):
        s = KernelScoreSet(scores=(0.4, 0.4, 0.4), reference_is_ground_truth=True)
        assert training_target(s, candidate_set(3)) == 3

    def test_random_matches_linear_scan(self, rng):
        k = candidate_set(15)
        for _ in range(50):
            vals = tuple(rng.random(15))
            s = KernelScoreSet(scores=vals, reference_is_ground_truth=False)
            best_idx, best = 0, vals[0]
            for i, v in enumerate(vals):
                if v > best:
                    best_idx, best = i, v
            assert training_target(s, k) == k.values[best_idx]

    def test_empty_and_mismatch(self):
        with pytest.raises(DataError):
            training_target(KernelScoreSet(scores=(), reference_is_ground_truth=True), candidate_set(1))
        with pytest.raises(DataError):
            training_target(
                KernelScoreSet(scores=(0.1, 0.2), reference_is_ground_truth=True),
                candidate_set(3),
            )


class TestHuberLoss:
    def test_zero_at_target(self):
        assert huber_loss(7, 7) == 0.0

    def test_quadratic_branch(self):
        assert huber_loss(5.0, 5.2) == pytest.approx(0.02)

    def test_linear_branch(self):
        assert huber_loss(5.0, 7.0) == pytest.approx(0.555)

    def test_continuity_at_delta(self):
        quadratic = 0.5 * 0.3**2
        linear = 0.3 * 0.3 - 0.5 * 0.3**2
        assert quadratic == pytest.approx(0.045)
        assert linear == pytest.approx(0.045)
        assert huber_loss(5.0, 5.3) == pytest.approx(0.045)

    def test_symmetry_in_residual(self, rng):
        for _ in range(20):
            g, k = rng.uniform(3, 31, size=2)
            assert huber_loss(g, k) == pytest.approx(huber_loss(k, g))

    def test_bad_delta(self):
        with pytest.raises(ConfigError):
            huber_loss(3, 5, delta=0.0)


class TestOracleSelector:
    def test_unique_maximum(self, rng):
        ref = random_mask(rng, 12, 12)
        ref[0, 0] = 1

        def fn(m, k):
            return ref if k == 7 else np.zeros_like(ref)

        assert oracle_selector(random_mask(rng, 12, 12), fn, ref) == 7

    def test_constant_fn_minimum_kernel(self, rng):
        ref = random_mask(rng, 8, 8)
        assert oracle_selector(ref, lambda m, k: ref, ref) == 3

    def test_attains_max_iou_exhaustive_rescan(self, rng):
        # the chosen kernel's IoU must not be beaten by any other candidate
        for _ in range(10):
            m = np.zeros((40, 40), dtype=np.uint8)
            m[4:36, 4:36] = random_mask(rng, 32, 32, density=0.8)
            k_star = int(rng.choice(DEFAULT_CANDIDATES.values))
            ref = erode(m, make_elliptical_kernel(k_star))

            def fn(map_, k):
                return erode(map_, make_elliptical_kernel(k))

            chosen = oracle_selector(m, fn, ref)
            chosen_iou = raw_iou(fn(m, chosen), ref)
            for k in DEFAULT_CANDIDATES.values:
                assert chosen_iou >= raw_iou(fn(m, k), ref) - 1e-12


class TestHeuristicSelector:
    def test_empty_map(self):
        assert heuristic_selector(np.zeros((10, 10), np.uint8)) == 3

    def test_solid_block(self):
        m = np.zeros((30, 30), dtype=np.uint8)
        m[5:25, 5:25] = 1  # area 400 -> 0.5*sqrt = 10 -> round up to odd 11
        assert heuristic_selector(m) == 11

    def test_clamped_at_max(self):
        m = np.ones((200, 200), dtype=np.uint8)
        assert heuristic_selector(m) == 31

    def test_always_odd_in_range(self, rng):
        for _ in range(30):
            m = random_mask(rng, 32, 32, density=0.3)
            k = heuristic_selector(m)
            assert k % 2 == 1 and 3 <= k <= 31


class TestSelectors:
    def test_fixed(self):
        sel = FixedKernelSelector(5)
        assert sel.select(np.ones((4, 4), np.uint8)) == 5
        assert sel.describe() == "fixed:5"
        with pytest.raises(ConfigError):
            FixedKernelSelector(4)
        with pytest.raises(ConfigError):
            FixedKernelSelector(33)

    def test_heuristic_class_matches_function(self, rng):
        m = random_mask(rng, 20, 20, density=0.4)
        assert HeuristicKernelSelector().select(m) == heuristic_selector(m)

    def test_oracle_requires_closure(self, rng):
        sel = OracleKernelSelector(random_mask(rng, 8, 8))
        with pytest.raises(ConfigError):
            sel.select(random_mask(rng, 8, 8))

    def test_learned_snaps_to_candidates(self, tmp_path, rng):
        manifest = write_toy_kernel_predictor(tmp_path, predicted_value=7.3)
        sel = LearnedKernelSelector(manifest)
        k = sel.select(random_mask(rng, 50, 40))
        assert k == 7

    def test_learned_clamps_into_range(self, tmp_path, rng):
        manifest = write_toy_kernel_predictor(tmp_path, predicted_value=100.0)
        assert LearnedKernelSelector(manifest).select(random_mask(rng, 16, 16)) == 31

    def test_learned_rejects_wrong_kind(self, tmp_path):
        import json

        bad = tmp_path / "bad.json"
        bad.write_text(json.dumps({"format": "crackmanifest/1", "kind": "detector"}))
        with pytest.raises(ConfigError):
            LearnedKernelSelector(bad)


class TestAutoKernelSize:
    def test_fixed_mode(self, rng):
        assert auto_kernel_size(random_mask(rng, 8, 8), FixedKernelSelector(5)) == 5

    def test_empty_map_short_circuits(self):
        class Boom(FixedKernelSelector):
            def select(self, map_, refine_fn=None):
                raise AssertionError("selector must not run on empty maps")

        assert auto_kernel_size(np.zeros((6, 6), np.uint8), Boom(5)) == 3

    def test_invalid_selector_output(self, rng):
        class Bad(FixedKernelSelector):
            def select(self, map_, refine_fn=None):
                return 4

        with pytest.raises(ConfigError):
            auto_kernel_size(random_mask(rng, 8, 8), Bad(5))


class TestTrainingTargetExport:
    def test_csv_rows(self, tmp_path):
        k = candidate_set(3)
        rows = [
            ("fx0", KernelScoreSet(scores=(0.1, 0.8, 0.3), reference_is_ground_truth=True)),
            ("fx1", KernelScoreSet(scores=(0.5, 0.5, 0.5), reference_is_ground_truth=True)),
        ]
        out = tmp_path / "targets.csv"
        export_training_targets(rows, k, out)
        with open(out) as fh:
            parsed = list(csv.reader(fh))
        assert parsed[0] == ["fixture", "target", "score_k3", "score_k5", "score_k7"]
        assert parsed[1][:2] == ["fx0", "5"]
        assert parsed[2][:2] == ["fx1", "3"]
