"""Selection of the erosion kernel size for map cleanup.

The candidate set is the odd integers 3..2n+1 (15 candidates by default, so
3..31). A selector maps a binary map to one candidate:

* ``fixed:K``    always K.
* ``oracle``     exhaustively scores every candidate against a reference
                 mask and returns the argmax (first maximum on ties, i.e.
                 the least destructive kernel). Needs the reference and a
                 refinement closure, so it is only available when ground
                 truth is at hand.
* ``heuristic``  a reference-free fallback scaled to the mean region area.
* ``learned:P``  a serialized predictor graph; its scalar output is snapped
                 to the nearest candidate. The reference predictor is a conv
                 stem plus star-operation blocks at depths [1,1,1,1], a 3x3
                 adaptive average pool and a three-layer fully connected
                 head, trained elsewhere against the oracle targets exported
                 here (huber loss, delta 0.3).
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from .errors import BackendError, ConfigError, DataError
from .graph_runtime import load_graph
from .imgproc import as_mask, find_contours, resize, round_half_up
from .metrics import iou

RefineFn = Callable[[np.ndarray, int], np.ndarray]

KERNEL_MIN = 3


@dataclass(frozen=True)
class KernelCandidates:
    """The odd kernel sizes 3, 5, ..., 2n+1."""

    values: tuple[int, ...]

    @property
    def max(self) -> int:
        return self.values[-1]


def candidate_set(n_k: int = 15) -> KernelCandidates:
    if n_k < 1:
        raise ConfigError(f"candidate count must be >= 1, got {n_k}")
    return KernelCandidates(values=tuple(range(3, 2 * n_k + 2, 2)))


DEFAULT_CANDIDATES = candidate_set(15)


@dataclass(frozen=True)
class KernelScoreSet:
    """Per-candidate IoU scores against the reference mask used."""

    scores: tuple[float, ...]
    reference_is_ground_truth: bool


def score_kernels(
    refine_fn: RefineFn,
    map_: np.ndarray,
    reference: np.ndarray,
    candidates: KernelCandidates = DEFAULT_CANDIDATES,
    reference_is_ground_truth: bool = True,
) -> KernelScoreSet:
    """IoU of the refined mask under each candidate kernel vs ``reference``."""
    map_ = as_mask(map_)
    reference = as_mask(reference)
    scores = []
    for k in candidates.values:
        try:
            refined = refine_fn(map_, k)
        except Exception as exc:
            raise BackendError(f"refinement failed for kernel {k}: {exc}") from exc
        scores.append(iou(refined, reference))
    return KernelScoreSet(
        scores=tuple(scores), reference_is_ground_truth=reference_is_ground_truth
    )


def training_target(scores: KernelScoreSet, candidates: KernelCandidates) -> int:
    """Kernel size at the first maximal score (ties pick the smallest kernel)."""
    if not scores.scores or not candidates.values:
        raise DataError("empty score or candidate set")
    if len(scores.scores) != len(candidates.values):
        raise DataError(
            f"score/candidate length mismatch: {len(scores.scores)} vs {len(candidates.values)}"
        )
    return candidates.values[int(np.argmax(scores.scores))]


def huber_loss(target: float, predicted: float, delta: float = 0.3) -> float:
    """Quadratic within ``delta`` of the target, linear beyond it."""
    if delta <= 0:
        raise ConfigError(f"delta must be > 0, got {delta}")
    d = abs(target - predicted)
    if d <= delta:
        return 0.5 * d * d
    return delta * d - 0.5 * delta * delta


def _snap_to_candidates(value: float, candidates: KernelCandidates) -> int:
    return min(candidates.values, key=lambda k: (abs(k - value), k))


class KernelSelector:
    """Interface: map a binary map to an odd kernel size within the candidates."""

    mode = "abstract"
    candidates = DEFAULT_CANDIDATES

    def select(self, map_: np.ndarray, refine_fn: RefineFn | None = None) -> int:
        raise NotImplementedError

    def describe(self) -> str:
        return self.mode


class FixedKernelSelector(KernelSelector):
    mode = "fixed"

    def __init__(self, k: int, candidates: KernelCandidates = DEFAULT_CANDIDATES):
        if k % 2 == 0 or not (KERNEL_MIN <= k <= candidates.max):
            raise ConfigError(
                f"fixed kernel must be odd and in [{KERNEL_MIN}, {candidates.max}], got {k}"
            )
        self.k = k
        self.candidates = candidates

    def select(self, map_, refine_fn=None) -> int:
        return self.k

    def describe(self) -> str:
        return f"fixed:{self.k}"


class HeuristicKernelSelector(KernelSelector):
    """Reference-free choice: half the square root of the mean region area."""

    mode = "heuristic"

    def __init__(self, candidates: KernelCandidates = DEFAULT_CANDIDATES):
        self.candidates = candidates

    def select(self, map_, refine_fn=None) -> int:
        return heuristic_selector(map_, self.candidates)

    def describe(self) -> str:
        return "heuristic"


class OracleKernelSelector(KernelSelector):
    """Exhaustive argmax of IoU against a known reference mask."""

    mode = "oracle"

    def __init__(
        self,
        reference: np.ndarray,
        candidates: KernelCandidates = DEFAULT_CANDIDATES,
        reference_is_ground_truth: bool = True,
    ):
        self.reference = as_mask(reference)
        self.candidates = candidates
        self.reference_is_ground_truth = reference_is_ground_truth

    def select(self, map_, refine_fn=None) -> int:
        if refine_fn is None:
            raise ConfigError("oracle kernel selection needs a refinement closure")
        return oracle_selector(
            map_,
            refine_fn,
            self.reference,
            self.candidates,
            reference_is_ground_truth=self.reference_is_ground_truth,
        )

    def describe(self) -> str:
        return "oracle"


class LearnedKernelSelector(KernelSelector):
    """Runs a serialized predictor graph and snaps its output into range.

    The manifest declares the graph path, the spatial size the predictor
    consumes and the input normalization; maps are resized (nearest) to that
    size before inference.
    """

    mode = "learned"

    def __init__(self, manifest_path: str | Path, candidates: KernelCandidates = DEFAULT_CANDIDATES):
        manifest_path = Path(manifest_path)
        try:
            manifest = json.loads(manifest_path.read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise DataError(f"cannot read predictor manifest {manifest_path}: {exc}") from exc
        if manifest.get("kind") != "kernel-predictor":
            raise ConfigError(
                f"{manifest_path}: expected kind 'kernel-predictor', got {manifest.get('kind')!r}"
            )
        self.input_size = tuple(manifest["input_size"])
        norm = manifest.get("normalization", {})
        self.norm_mean = float(norm.get("mean", 0.0))
        self.norm_std = float(norm.get("std", 1.0))
        self.graph = load_graph(manifest_path.parent / manifest["graph"])
        self.candidates = candidates
        self._source = str(manifest_path)

    def select(self, map_, refine_fn=None) -> int:
        map_ = as_mask(map_)
        w, h = self.input_size
        scaled = resize(map_, w, h).astype(np.float64)
        x = (scaled - self.norm_mean) / self.norm_std
        raw = self.graph.run({self.graph.input_names[0]: x[None, None, :, :]})
        return _snap_to_candidates(float(np.asarray(raw).ravel()[0]), self.candidates)

    def describe(self) -> str:
        return f"learned:{self._source}"


def oracle_selector(
    map_: np.ndarray,
    refine_fn: RefineFn,
    reference: np.ndarray,
    candidates: KernelCandidates = DEFAULT_CANDIDATES,
    reference_is_ground_truth: bool = True,
) -> int:
    """Exhaustively score every candidate and return the best kernel size."""
    scores = score_kernels(
        refine_fn, map_, reference, candidates, reference_is_ground_truth
    )
    return training_target(scores, candidates)


def heuristic_selector(
    map_: np.ndarray, candidates: KernelCandidates = DEFAULT_CANDIDATES
) -> int:
    """Nearest odd kernel to 0.5 * sqrt(mean region area), clamped to range."""
    map_ = as_mask(map_)
    regions = find_contours(map_)
    if not regions:
        return KERNEL_MIN
    mean_area = float(np.mean([r.area for r in regions]))
    v = round_half_up(0.5 * math.sqrt(mean_area))
    if v % 2 == 0:
        v += 1
    return min(max(v, KERNEL_MIN), candidates.max)


def export_training_targets(
    rows: list[tuple[str, KernelScoreSet]],
    candidates: KernelCandidates,
    path: str | Path,
) -> None:
    """Write (fixture id, target kernel, per-candidate scores) rows as CSV."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["fixture", "target"] + [f"score_k{k}" for k in candidates.values]
        )
        for fixture_id, scores in rows:
            target = training_target(scores, candidates)
            writer.writerow(
                [fixture_id, target] + [f"{s:.6f}" for s in scores.scores]
            )
