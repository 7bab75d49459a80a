"""Pixel-level segmentation metrics and a per-stage throughput meter."""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DataError
from .imgproc import as_mask


@dataclass(frozen=True)
class MetricReport:
    """Confusion counts and the derived ratios for one prediction/GT pair.

    All zero-denominator ratios are defined as 0, which penalizes empty
    predictions in dataset aggregates.
    """

    tp: int
    fp: int
    fn: int
    tn: int
    precision: float
    recall: float
    iou: float
    dice: float

    def as_dict(self) -> dict:
        return {
            "tp": self.tp,
            "fp": self.fp,
            "fn": self.fn,
            "tn": self.tn,
            "precision": self.precision,
            "recall": self.recall,
            "iou": self.iou,
            "dice": self.dice,
        }


def _ratio(num: float, den: float) -> float:
    return num / den if den > 0 else 0.0


def report_from_counts(tp: int, fp: int, fn: int, tn: int) -> MetricReport:
    return MetricReport(
        tp=tp,
        fp=fp,
        fn=fn,
        tn=tn,
        precision=_ratio(tp, tp + fp),
        recall=_ratio(tp, tp + fn),
        iou=_ratio(tp, tp + fp + fn),
        dice=_ratio(2 * tp, 2 * tp + fp + fn),
    )


def evaluate_mask(pred: np.ndarray, gt: np.ndarray) -> MetricReport:
    """Confusion counts plus precision/recall/IoU/dice for two binary masks."""
    pred, gt = as_mask(pred), as_mask(gt)
    if pred.shape != gt.shape:
        raise DataError(f"dimension mismatch: {pred.shape} vs {gt.shape}")
    p = pred.astype(bool)
    g = gt.astype(bool)
    tp = int(np.count_nonzero(p & g))
    fp = int(np.count_nonzero(p & ~g))
    fn = int(np.count_nonzero(~p & g))
    tn = int(np.count_nonzero(~p & ~g))
    return report_from_counts(tp, fp, fn, tn)


def iou(a: np.ndarray, b: np.ndarray) -> float:
    """Intersection over union of two binary masks (0 when both are empty)."""
    a, b = as_mask(a).astype(bool), as_mask(b).astype(bool)
    if a.shape != b.shape:
        raise DataError(f"dimension mismatch: {a.shape} vs {b.shape}")
    union = int(np.count_nonzero(a | b))
    return _ratio(int(np.count_nonzero(a & b)), union)


def aggregate(reports: list[MetricReport], mode: str = "image-mean") -> dict:
    """Combine per-image reports into dataset-level metrics.

    ``image-mean`` averages each ratio across images; ``pixel-pooled`` sums
    the confusion counts first and derives the ratios once.
    """
    if not reports:
        raise DataError("no reports to aggregate")
    if mode == "image-mean":
        return {
            k: float(np.mean([getattr(r, k) for r in reports]))
            for k in ("precision", "recall", "iou", "dice")
        }
    if mode == "pixel-pooled":
        pooled = report_from_counts(
            tp=sum(r.tp for r in reports),
            fp=sum(r.fp for r in reports),
            fn=sum(r.fn for r in reports),
            tn=sum(r.tn for r in reports),
        )
        return {k: getattr(pooled, k) for k in ("precision", "recall", "iou", "dice")}
    raise ConfigError(f"unknown aggregation mode: {mode}")


@dataclass
class FpsMeter:
    """Accumulates per-stage wall-clock time over a run of frames.

    One meter belongs to one pipeline run; it is not thread-safe.
    """

    frames: int = 0
    stage_seconds: dict[str, float] = field(default_factory=dict)
    _t0: float = field(default_factory=time.perf_counter)
    _t_end: float | None = None

    def add(self, stage: str, seconds: float) -> None:
        self.stage_seconds[stage] = self.stage_seconds.get(stage, 0.0) + seconds

    def frame_done(self) -> None:
        self.frames += 1
        self._t_end = time.perf_counter()

    def total_seconds(self) -> float:
        return (self._t_end if self._t_end is not None else time.perf_counter()) - self._t0

    def fps(self, stage: str | None = None) -> float:
        """Frames per second for one stage, or end-to-end when stage is None."""
        if self.frames == 0:
            raise DataError("no completed frames")
        seconds = self.total_seconds() if stage is None else self.stage_seconds.get(stage, 0.0)
        return self.frames / seconds if seconds > 0 else float("inf")

    def as_dict(self) -> dict:
        out = {
            "frames": self.frames,
            "total_seconds": self.total_seconds(),
            "total_fps": self.fps(),
            "stages": {},
        }
        for stage, seconds in sorted(self.stage_seconds.items()):
            out["stages"][stage] = {"seconds": seconds, "fps": self.fps(stage)}
        return out
