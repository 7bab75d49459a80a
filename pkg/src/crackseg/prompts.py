"""Point-prompt synthesis from connected regions of a binary map.

Candidate points are sampled on interior cross-sections of each region: the
region's bounding box is cut into ``n_segments`` slices along its longer axis
and the center of the crack cross-section is taken on each interior cut line.
From the pooled candidates the final prompts are picked with a random first
point followed by farthest-point selection, which spreads prompts along the
structure.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .imgproc import BoundingBox, as_mask


@dataclass(frozen=True)
class PointPrompt:
    """A labeled point in model-input coordinates. label 1 = foreground."""

    x: int
    y: int
    label: int


@dataclass(frozen=True)
class RegionPointSet:
    """Candidate points extracted from one connected region."""

    region_id: int
    points: tuple[tuple[int, int], ...]


def find_centers(line: np.ndarray) -> list[int]:
    """Centers of the runs of consecutive nonzero entries in a 1-D array.

    The nonzero indices are split into maximal runs of consecutive values and
    the central index (position ``len // 2``) of each run is returned, in
    order. An all-zero line yields an empty list.
    """
    idx = np.flatnonzero(np.asarray(line))
    if idx.size == 0:
        return []
    breaks = np.flatnonzero(np.diff(idx) > 1) + 1
    return [int(run[len(run) // 2]) for run in np.split(idx, breaks)]


def extract_region_points(
    map_: np.ndarray, box: BoundingBox, n_segments: int = 4
) -> list[tuple[int, int]]:
    """Sample up to ``n_segments - 1`` interior points of a region.

    ``box`` is the region's bounding box inside ``map_``. The longer box axis
    is divided into ``n_segments`` parts; on each of the interior division
    lines the crack cross-section centers are computed with
    :func:`find_centers` and the middle one is emitted. Cut lines that miss
    the region contribute nothing, and boxes too small to divide yield an
    empty list.
    """
    if n_segments < 2:
        raise ConfigError(f"n_segments must be >= 2, got {n_segments}")
    map_ = as_mask(map_)
    points: list[tuple[int, int]] = []
    x, y, w, h = box.as_tuple()
    if w > h:
        step = w // n_segments
        if step == 0:
            return points
        for i in range(1, n_segments):
            col = x + i * step
            centers = find_centers(map_[y : y + h, col])
            if centers:
                points.append((col, y + centers[len(centers) // 2]))
    else:
        step = h // n_segments
        if step == 0:
            return points
        for i in range(1, n_segments):
            row = y + i * step
            centers = find_centers(map_[row, x : x + w])
            if centers:
                points.append((x + centers[len(centers) // 2], row))
    return points


def _farthest(pool: list[tuple[int, int]], chosen: list[tuple[int, int]]) -> tuple[int, int]:
    # First pool entry wins ties, so selection order is deterministic.
    best, best_d = None, -1.0
    for p in pool:
        d = min((p[0] - c[0]) ** 2 + (p[1] - c[1]) ** 2 for c in chosen)
        if d > best_d:
            best, best_d = p, d
    return best


def select_prompts(
    candidates: list[RegionPointSet],
    points_per_map: int,
    label: int,
    rng: np.random.Generator,
) -> list[PointPrompt]:
    """Pick up to ``points_per_map`` prompts from the pooled candidates.

    The first prompt is drawn uniformly at random from the pool; the second
    maximizes Euclidean distance to the first; the third maximizes the
    minimum distance to both chosen points. Fewer prompts are returned when
    the pool is smaller. An empty pool yields an empty list.
    """
    if points_per_map not in (1, 2, 3):
        raise ConfigError(f"points_per_map must be 1, 2 or 3, got {points_per_map}")
    if label not in (0, 1):
        raise ConfigError(f"label must be 0 or 1, got {label}")
    pool: list[tuple[int, int]] = []
    for cand in candidates:
        pool.extend(cand.points)
    if not pool:
        return []
    chosen = [pool[int(rng.integers(len(pool)))]]
    remaining = [p for p in pool if p != chosen[0]]
    while len(chosen) < points_per_map and remaining:
        nxt = _farthest(remaining, chosen)
        chosen.append(nxt)
        remaining = [p for p in remaining if p != nxt]
    return [PointPrompt(x=p[0], y=p[1], label=label) for p in chosen]
