"""Prompt-based mask refinement.

Given a crop, its detection boxes and an initial mask from a coarser pass,
the refiner re-segments the crop, builds the difference map (pixels only the
initial pass claimed, likely false positives) and the intersection map
(pixels both passes agree on, likely true positives), erodes each with an
adaptively sized elliptical kernel, and turns the surviving large regions
into labeled point prompts: negatives from the difference map, positives
from the intersection map. A final prompt-conditioned decode produces the
refined mask; when no prompts can be extracted the input mask is returned
unchanged.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .backends import SegmentationBackend
from .errors import BackendError, ConfigError, DataError
from .imgproc import (
    BoundingBox,
    as_mask,
    erode,
    find_contours,
    make_elliptical_kernel,
    mask_difference,
    mask_intersection,
    resize_image,
    resize_mask,
    round_half_up,
)
from .kernels import (
    DEFAULT_CANDIDATES,
    FixedKernelSelector,
    HeuristicKernelSelector,
    KernelSelector,
    KERNEL_MIN,
    LearnedKernelSelector,
    OracleKernelSelector,
)
from .prompts import PointPrompt, RegionPointSet, extract_region_points, select_prompts

NEGATIVE = 0
POSITIVE = 1


@dataclass(frozen=True)
class RefinementConfig:
    """All refinement knobs.

    ``points_per_map`` prompts are drawn from each of the two maps, so the
    total prompt budget is 2, 4 or 6. Regions must exceed ``area_threshold``
    pixels after erosion to contribute prompts. ``kernel_mode`` is one of
    ``fixed:K``, ``oracle``, ``heuristic`` or ``learned:<manifest>``; the
    selector object passed to :func:`refine` takes precedence, the string is
    kept for reports and CLI plumbing.
    """

    points_per_map: int = 2
    area_threshold: int = 50
    n_segments: int = 4
    expand_factor: float = 0.2
    kernel_mode: str = "fixed:3"
    erode_intersection: bool = True
    fusion_alpha: float = 0.5
    rng_seed: int = 0

    def __post_init__(self):
        if self.points_per_map not in (1, 2, 3):
            raise ConfigError(f"points_per_map must be 1, 2 or 3, got {self.points_per_map}")
        if self.area_threshold < 0:
            raise ConfigError(f"area_threshold must be >= 0, got {self.area_threshold}")
        if self.n_segments < 2:
            raise ConfigError(f"n_segments must be >= 2, got {self.n_segments}")
        if self.expand_factor < 0:
            raise ConfigError(f"expand_factor must be >= 0, got {self.expand_factor}")
        if not 0.0 <= self.fusion_alpha <= 1.0:
            raise ConfigError(f"fusion_alpha must be in [0, 1], got {self.fusion_alpha}")
        mode = self.kernel_mode.split(":", 1)[0]
        if mode not in ("fixed", "oracle", "heuristic", "learned"):
            raise ConfigError(f"unknown kernel_mode {self.kernel_mode!r}")
        if mode == "fixed":
            try:
                k = int(self.kernel_mode.split(":", 1)[1])
            except (IndexError, ValueError):
                raise ConfigError(f"kernel_mode {self.kernel_mode!r} needs an integer size") from None
            if k % 2 == 0:
                raise ConfigError(f"fixed kernel size must be odd, got {k}")


def make_selector(
    kernel_mode: str, reference: np.ndarray | None = None
) -> KernelSelector:
    """Build the kernel selector named by a ``kernel_mode`` string."""
    mode, _, arg = kernel_mode.partition(":")
    if mode == "fixed":
        return FixedKernelSelector(int(arg))
    if mode == "heuristic":
        return HeuristicKernelSelector()
    if mode == "oracle":
        if reference is None:
            raise ConfigError("oracle kernel mode needs a reference mask")
        return OracleKernelSelector(reference)
    if mode == "learned":
        if not arg:
            raise ConfigError("learned kernel mode needs a manifest path")
        return LearnedKernelSelector(arg)
    raise ConfigError(f"unknown kernel_mode {kernel_mode!r}")


@dataclass(frozen=True)
class RefinementOutcome:
    """What one refinement pass produced, for assertions and reports."""

    refined: np.ndarray
    initial: np.ndarray
    diff_map: np.ndarray
    inter_map: np.ndarray
    prompts: tuple[PointPrompt, ...]
    kernels: tuple[dict, ...]
    fallback: bool


def auto_kernel_size(
    map_: np.ndarray,
    selector: KernelSelector,
    refine_fn=None,
    candidates=DEFAULT_CANDIDATES,
) -> int:
    """Kernel size for one map. Empty maps short-circuit to the minimum."""
    map_ = as_mask(map_)
    if not map_.any():
        return KERNEL_MIN
    k = selector.select(map_, refine_fn)
    if k % 2 == 0 or not (KERNEL_MIN <= k <= candidates.max):
        raise ConfigError(f"selector returned invalid kernel size {k}")
    return k


def _prompts_from_eroded(
    eroded: np.ndarray,
    label: int,
    cfg: RefinementConfig,
    rng: np.random.Generator,
) -> list[PointPrompt]:
    candidates = []
    for idx, region in enumerate(find_contours(eroded)):
        if region.area > cfg.area_threshold:
            pts = extract_region_points(eroded, region.bbox, cfg.n_segments)
            candidates.append(RegionPointSet(region_id=idx, points=tuple(pts)))
    return select_prompts(candidates, cfg.points_per_map, label, rng)


def _scale_point(p: PointPrompt, sx: float, sy: float, w: int, h: int) -> PointPrompt:
    return PointPrompt(
        x=min(max(round_half_up(p.x * sx), 0), w - 1),
        y=min(max(round_half_up(p.y * sy), 0), h - 1),
        label=p.label,
    )


def _scale_box(b: BoundingBox, sx: float, sy: float, w: int, h: int) -> BoundingBox:
    x1 = min(max(round_half_up(b.x * sx), 0), w - 1)
    y1 = min(max(round_half_up(b.y * sy), 0), h - 1)
    x2 = min(max(round_half_up(b.x2 * sx), x1 + 1), w)
    y2 = min(max(round_half_up(b.y2 * sy), y1 + 1), h)
    return BoundingBox(x1, y1, x2 - x1, y2 - y1)


class _BoxRefiner:
    """Runs the refinement recipe for a single box of one crop."""

    def __init__(self, backend, emb, crop_size, model_size, cfg, selector):
        self.backend = backend
        self.emb = emb
        self.crop_w, self.crop_h = crop_size
        self.model_w, self.model_h = model_size
        self.sx = self.model_w / self.crop_w
        self.sy = self.model_h / self.crop_h
        self.cfg = cfg
        self.selector = selector

    def decode(self, box: BoundingBox, points: list[PointPrompt] | None = None) -> np.ndarray:
        scaled_box = _scale_box(box, self.sx, self.sy, self.model_w, self.model_h)
        scaled_pts = None
        if points:
            scaled_pts = [
                _scale_point(p, self.sx, self.sy, self.model_w, self.model_h)
                for p in points
            ]
        try:
            out = self.backend.decode(self.emb, [scaled_box], scaled_pts)
        except BackendError:
            raise
        except Exception as exc:
            raise BackendError(str(exc), stage="decode") from exc
        return resize_mask(out, self.crop_w, self.crop_h)

    def _map_refine_fn(self, box: BoundingBox, label: int):
        """Closure the oracle selector scores candidates with: erode this map
        with the candidate kernel, extract this map's prompts and decode."""

        def fn(map_: np.ndarray, k: int) -> np.ndarray:
            rng = np.random.default_rng(self.cfg.rng_seed)
            eroded = erode(map_, make_elliptical_kernel(k))
            prompts = _prompts_from_eroded(eroded, label, self.cfg, rng)
            if not prompts:
                return np.zeros((self.crop_h, self.crop_w), dtype=np.uint8)
            return self.decode(box, prompts)

        return fn

    def process_map(
        self,
        map_: np.ndarray,
        label: int,
        box: BoundingBox,
        rng: np.random.Generator,
        apply_erosion: bool,
    ) -> tuple[list[PointPrompt], np.ndarray, int | None]:
        if apply_erosion:
            k = auto_kernel_size(map_, self.selector, self._map_refine_fn(box, label))
            worked = erode(map_, make_elliptical_kernel(k))
        else:
            k = None
            worked = map_
        prompts = _prompts_from_eroded(worked, label, self.cfg, rng)
        return prompts, worked, k


def refine(
    backend: SegmentationBackend,
    crop: np.ndarray,
    boxes: list[BoundingBox],
    m: np.ndarray,
    cfg: RefinementConfig,
    selector: KernelSelector | None = None,
) -> RefinementOutcome:
    """Refine the mask ``m`` of ``crop`` using prompts derived from its
    disagreement with a fresh segmentation.

    ``m`` must have the crop's dimensions and ``boxes`` must be expressed in
    crop coordinates. With several boxes the recipe runs once per box and the
    refined masks are OR-merged; a box that yields no prompts contributes the
    input mask unchanged. The whole pass is deterministic for a fixed config
    seed and backend.
    """
    m = as_mask(m)
    crop_h, crop_w = crop.shape[:2]
    if m.shape != (crop_h, crop_w):
        raise DataError(f"mask {m.shape} does not match crop {(crop_h, crop_w)}")
    if not boxes:
        raise ConfigError("refine needs at least one box")
    if selector is None:
        selector = make_selector(cfg.kernel_mode)

    model_size = backend.input_size or (crop_w, crop_h)
    model_input = crop
    if (crop_w, crop_h) != tuple(model_size):
        model_input = resize_image(crop, model_size[0], model_size[1])
    try:
        emb = backend.encode(model_input)
    except BackendError:
        raise
    except Exception as exc:
        raise BackendError(str(exc), stage="encode") from exc

    runner = _BoxRefiner(backend, emb, (crop_w, crop_h), model_size, cfg, selector)
    rng = np.random.default_rng(cfg.rng_seed)

    refined_union = np.zeros_like(m)
    initial_union = np.zeros_like(m)
    diff_union = np.zeros_like(m)
    inter_union = np.zeros_like(m)
    all_prompts: list[PointPrompt] = []
    kernels: list[dict] = []
    any_prompts = False

    for box_idx, box in enumerate(boxes):
        m_prime = runner.decode(box)
        diff = mask_difference(m, m_prime)
        negatives, diff_worked, k_diff = runner.process_map(
            diff, NEGATIVE, box, rng, apply_erosion=True
        )
        inter = mask_intersection(m, m_prime)
        positives, inter_worked, k_inter = runner.process_map(
            inter, POSITIVE, box, rng, apply_erosion=cfg.erode_intersection
        )
        prompts = negatives + positives
        if prompts:
            any_prompts = True
            refined = runner.decode(box, prompts)
        else:
            refined = m.copy()

        refined_union |= refined
        initial_union |= m_prime
        diff_union |= diff_worked
        inter_union |= inter_worked
        all_prompts.extend(prompts)
        kernels.append({"box": box_idx, "map": "difference", "kernel": k_diff})
        kernels.append({"box": box_idx, "map": "intersection", "kernel": k_inter})

    if not any_prompts:
        refined_union = m.copy()

    return RefinementOutcome(
        refined=refined_union,
        initial=initial_union,
        diff_map=diff_union,
        inter_map=inter_union,
        prompts=tuple(all_prompts),
        kernels=tuple(kernels),
        fallback=not any_prompts,
    )
