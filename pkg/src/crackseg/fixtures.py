"""Synthetic crack fixtures for tests, benchmarks and demo datasets.

A fixture is a banded grayscale image (see :mod:`crackseg.backends`) whose
pixels encode the hidden truth and the oracle backend's mistakes, plus an
"initial" mask that imitates a coarse first-pass segmentation: it carries
the backend's own mistakes and, on top, extra hallucinations and holes the
re-segmentation does not share. Those extras are what the difference map
picks up during refinement.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .backends import (
    Blob,
    SyntheticOracleBackend,
    SyntheticOracleSpec,
    save_synthetic_spec,
)
from .imgproc import BoundingBox, as_mask
from .io import save_image, save_mask


def _stamp_disk(mask: np.ndarray, cy: float, cx: float, radius: float) -> None:
    h, w = mask.shape
    y0, y1 = max(int(cy - radius) - 1, 0), min(int(cy + radius) + 2, h)
    x0, x1 = max(int(cx - radius) - 1, 0), min(int(cx + radius) + 2, w)
    if y1 <= y0 or x1 <= x0:
        return
    yy, xx = np.ogrid[y0:y1, x0:x1]
    mask[y0:y1, x0:x1] |= ((yy - cy) ** 2 + (xx - cx) ** 2) <= radius**2


def make_crack_mask(
    rng: np.random.Generator,
    height: int,
    width: int,
    n_cracks: int = 1,
    thickness: tuple[int, int] = (2, 3),
) -> np.ndarray:
    """Random jagged polylines stamped with disks, one per crack."""
    mask = np.zeros((height, width), dtype=bool)
    for _ in range(n_cracks):
        horizontal = bool(rng.integers(2))
        n_knots = int(rng.integers(4, 7))
        if horizontal:
            xs = np.linspace(2, width - 3, n_knots)
            ys = rng.uniform(height * 0.2, height * 0.8, size=n_knots)
        else:
            ys = np.linspace(2, height - 3, n_knots)
            xs = rng.uniform(width * 0.2, width * 0.8, size=n_knots)
        radius = rng.uniform(thickness[0], thickness[1])
        for i in range(n_knots - 1):
            steps = int(max(abs(xs[i + 1] - xs[i]), abs(ys[i + 1] - ys[i]))) + 1
            for t in np.linspace(0.0, 1.0, steps):
                cy = ys[i] + t * (ys[i + 1] - ys[i])
                cx = xs[i] + t * (xs[i + 1] - xs[i])
                _stamp_disk(mask, cy, cx, radius)
    return mask.astype(np.uint8)


def _random_ellipse_blob(
    rng: np.random.Generator,
    kind: str,
    anchor: tuple[int, int],
    radii: tuple[int, int] = (5, 9),
) -> Blob:
    rx = int(rng.integers(radii[0], radii[1] + 1))
    ry = int(rng.integers(radii[0], radii[1] + 1))
    return Blob(kind=kind, shape="ellipse", params=(anchor[0], anchor[1], rx, ry))


def _pick_pixel(rng: np.random.Generator, region: np.ndarray) -> tuple[int, int] | None:
    ys, xs = np.nonzero(region)
    if len(ys) == 0:
        return None
    i = int(rng.integers(len(ys)))
    return int(xs[i]), int(ys[i])


@dataclass(frozen=True)
class CorruptionFixture:
    """One generated refinement scenario."""

    spec: SyntheticOracleSpec
    image: np.ndarray
    truth: np.ndarray
    initial_mask: np.ndarray
    boxes: tuple[BoundingBox, ...]


def make_fixture(
    rng: np.random.Generator,
    size: tuple[int, int] = (128, 128),
    n_cracks: int = 1,
    shared_add: int = 1,
    shared_remove: int = 1,
    extra_add: int = 1,
    extra_remove: int = 1,
    degenerate: bool = False,
) -> CorruptionFixture:
    """Generate one fixture.

    ``shared_*`` blobs corrupt both the initial mask and the backend's own
    output; ``extra_*`` regions corrupt only the initial mask, so they show
    up in the difference map. ``degenerate`` produces a tiny clean crack that
    falls below the usual area threshold, exercising the fallback path.
    """
    width, height = size
    if degenerate:
        truth = np.zeros((height, width), dtype=np.uint8)
        y = int(rng.integers(4, height - 12))
        x = int(rng.integers(4, width - 12))
        truth[y : y + 8, x : x + 8] = 1
        spec = SyntheticOracleSpec(truth=truth, blobs=(), seed=int(rng.integers(2**31)))
        image = spec.render_image()
        backend = SyntheticOracleBackend()
        full = BoundingBox(0, 0, width, height)
        initial = backend.decode(backend.encode(image), [full])
        return CorruptionFixture(
            spec=spec, image=image, truth=truth, initial_mask=initial, boxes=(full,)
        )

    truth = make_crack_mask(rng, height, width, n_cracks=n_cracks)
    blobs = []
    for _ in range(shared_remove):
        anchor = _pick_pixel(rng, truth)
        if anchor:
            blobs.append(_random_ellipse_blob(rng, "remove", anchor, radii=(4, 7)))
    background = truth == 0
    for _ in range(shared_add):
        anchor = _pick_pixel(rng, background)
        if anchor:
            blobs.append(_random_ellipse_blob(rng, "add", anchor, radii=(5, 8)))
    spec = SyntheticOracleSpec(
        truth=truth, blobs=tuple(blobs), seed=int(rng.integers(2**31))
    )
    image = spec.render_image()

    backend = SyntheticOracleBackend()
    full = BoundingBox(0, 0, width, height)
    base = backend.decode(backend.encode(image), [full]).astype(bool)

    initial = base.copy()
    for _ in range(extra_add):
        anchor = _pick_pixel(rng, (~base) & (truth == 0))
        if anchor:
            blob = _random_ellipse_blob(rng, "add", anchor, radii=(6, 10))
            initial |= blob.rasterize(height, width)
    for _ in range(extra_remove):
        anchor = _pick_pixel(rng, base & truth.astype(bool))
        if anchor:
            blob = _random_ellipse_blob(rng, "remove", anchor, radii=(3, 5))
            initial &= ~blob.rasterize(height, width)

    return CorruptionFixture(
        spec=spec,
        image=image,
        truth=truth,
        initial_mask=initial.astype(np.uint8),
        boxes=(full,),
    )


def make_corruption_family(
    count: int,
    seed: int = 0,
    size: tuple[int, int] = (128, 128),
    degenerate_every: int = 20,
) -> list[CorruptionFixture]:
    """The standard corruption family: varied fixtures plus periodic
    degenerate ones that trigger the refinement fallback."""
    rng = np.random.default_rng(seed)
    fixtures = []
    for i in range(count):
        degenerate = degenerate_every > 0 and i % degenerate_every == degenerate_every - 1
        fixtures.append(
            make_fixture(
                rng,
                size=size,
                n_cracks=1 + int(rng.integers(2)),
                shared_add=int(rng.integers(2)),
                shared_remove=1 + int(rng.integers(2)),
                extra_add=1 + int(rng.integers(2)),
                extra_remove=int(rng.integers(2)),
                degenerate=degenerate,
            )
        )
    return fixtures


def write_dataset(
    out_dir: str | Path,
    count: int,
    seed: int = 0,
    size: tuple[int, int] = (160, 120),
    with_initial: bool = True,
) -> Path:
    """Write a PNG dataset (images/, masks/, optionally initial/) plus the
    per-fixture oracle specs; returns the dataset root."""
    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    (out / "masks").mkdir(parents=True, exist_ok=True)
    (out / "specs").mkdir(parents=True, exist_ok=True)
    if with_initial:
        (out / "initial").mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    for i in range(count):
        fixture = make_fixture(
            rng,
            size=size,
            n_cracks=1 + int(rng.integers(2)),
            shared_add=int(rng.integers(2)),
            shared_remove=1 + int(rng.integers(2)),
            extra_add=1 + int(rng.integers(2)),
            extra_remove=int(rng.integers(2)),
        )
        stem = f"fixture_{i:04d}"
        save_image(out / "images" / f"{stem}.png", fixture.image)
        save_mask(out / "masks" / f"{stem}.png", as_mask(fixture.truth))
        save_synthetic_spec(fixture.spec, out / "specs" / f"{stem}.json")
        if with_initial:
            save_mask(out / "initial" / f"{stem}.png", fixture.initial_mask)
    return out
