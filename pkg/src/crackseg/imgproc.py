"""Rasters, binary-mask morphology and geometry primitives.

Conventions used throughout the package:

* An image is a ``uint8`` numpy array, either ``(H, W)`` grayscale or
  ``(H, W, 3)`` RGB.
* A binary mask is a ``uint8`` numpy array of shape ``(H, W)`` whose values
  are exactly 0 or 1.
* Points are ``(x, y)`` pairs, x = column, y = row.

All functions here are pure and never mutate their inputs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from PIL import Image as PILImage
from scipy import ndimage

from .errors import ConfigError, DataError

# 8-connectivity structure for component labelling: cracks are thin diagonal
# structures and 4-connectivity would fragment them.
_CONN8 = np.ones((3, 3), dtype=bool)


@dataclass(frozen=True)
class BoundingBox:
    """Axis-aligned integer pixel rectangle, top-left anchored."""

    x: int
    y: int
    w: int
    h: int

    def __post_init__(self):
        if self.w < 1 or self.h < 1:
            raise DataError(f"degenerate box: {self.w}x{self.h}")

    @property
    def x2(self) -> int:
        return self.x + self.w

    @property
    def y2(self) -> int:
        return self.y + self.h

    def as_tuple(self) -> tuple[int, int, int, int]:
        return (self.x, self.y, self.w, self.h)


@dataclass(frozen=True)
class Region:
    """One 8-connected component of a binary mask.

    ``pixels`` is an ``(N, 2)`` int array of (row, col) coordinates; ``area``
    is the pixel count and ``bbox`` the tight enclosing rectangle.
    """

    pixels: np.ndarray
    area: int
    bbox: BoundingBox


def round_half_up(v: float) -> int:
    """Round with ties away from the floor (0.5 -> 1), unlike banker's round."""
    return int(math.floor(v + 0.5))


def as_mask(arr: np.ndarray) -> np.ndarray:
    """Validate and return ``arr`` as a binary mask (uint8, values in {0,1})."""
    m = np.asarray(arr)
    if m.ndim != 2:
        raise DataError(f"mask must be 2-D, got shape {m.shape}")
    if m.size and not np.isin(m, (0, 1)).all():
        raise DataError("mask values must be 0 or 1")
    return m.astype(np.uint8, copy=False)


def _check_same_shape(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise DataError(f"dimension mismatch: {a.shape} vs {b.shape}")


def mask_difference(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Set difference a \\ b: 1 where a is set and b is not."""
    a, b = as_mask(a), as_mask(b)
    _check_same_shape(a, b)
    return (a & (1 - b)).astype(np.uint8)


def mask_intersection(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pixelwise AND of two masks."""
    a, b = as_mask(a), as_mask(b)
    _check_same_shape(a, b)
    return (a & b).astype(np.uint8)


def make_elliptical_kernel(k: int) -> np.ndarray:
    """Elliptical (disc) structuring element of odd side length ``k``.

    Cell (i, j) is set iff ((i-c)/a)^2 + ((j-c)/a)^2 <= 1 with c = (k-1)/2 and
    a = k/2, evaluated at cell centers. The center cell and the full middle
    row/column are always set.
    """
    if k < 1 or k > 63 or k % 2 == 0:
        raise ConfigError(f"kernel side must be odd and in [1, 63], got {k}")
    c = (k - 1) / 2.0
    a = k / 2.0
    ii, jj = np.meshgrid(np.arange(k), np.arange(k), indexing="ij")
    return ((((ii - c) / a) ** 2 + ((jj - c) / a) ** 2) <= 1.0 + 1e-12)


def erode(m: np.ndarray, se: np.ndarray) -> np.ndarray:
    """Binary erosion: a pixel survives only if the whole footprint fits.

    Pixels outside the raster count as background, so foreground touching the
    border shrinks.
    """
    m = as_mask(m)
    return ndimage.binary_erosion(
        m.astype(bool), structure=se, border_value=0
    ).astype(np.uint8)


def find_contours(m: np.ndarray) -> list[Region]:
    """8-connected components of a mask, row-major by first (top-left) pixel."""
    m = as_mask(m)
    labels, count = ndimage.label(m, structure=_CONN8)
    regions = []
    for idx, slc in enumerate(ndimage.find_objects(labels), start=1):
        ys, xs = np.nonzero(labels[slc] == idx)
        ys = ys + slc[0].start
        xs = xs + slc[1].start
        bbox = BoundingBox(
            x=int(xs.min()),
            y=int(ys.min()),
            w=int(xs.max() - xs.min() + 1),
            h=int(ys.max() - ys.min() + 1),
        )
        pixels = np.stack([ys, xs], axis=1).astype(np.int32)
        regions.append(Region(pixels=pixels, area=len(pixels), bbox=bbox))
    return regions


def expand_box(b: BoundingBox, factor: float, bounds: tuple[int, int]) -> BoundingBox:
    """Grow a box by ``factor`` about its center, then clamp into ``bounds``.

    ``bounds`` is (width, height) of the host raster. The expanded box keeps
    its center where possible and is shifted (and if necessary shrunk) to fit.
    """
    if factor < 0:
        raise ConfigError(f"expansion factor must be >= 0, got {factor}")
    bw, bh = bounds
    w2 = max(1, round_half_up(b.w * (1.0 + factor)))
    h2 = max(1, round_half_up(b.h * (1.0 + factor)))
    x2 = round_half_up(b.x + (b.w - w2) / 2.0)
    y2 = round_half_up(b.y + (b.h - h2) / 2.0)
    w2, h2 = min(w2, bw), min(h2, bh)
    x2 = min(max(x2, 0), bw - w2)
    y2 = min(max(y2, 0), bh - h2)
    return BoundingBox(x2, y2, w2, h2)


def crop(src: np.ndarray, b: BoundingBox) -> np.ndarray:
    """Exact sub-raster of an image or mask; the box must lie inside ``src``."""
    h, w = src.shape[:2]
    if b.x < 0 or b.y < 0 or b.x2 > w or b.y2 > h:
        raise DataError(f"crop box {b.as_tuple()} outside raster {w}x{h}")
    return src[b.y : b.y2, b.x : b.x2].copy()


def _check_target(w: int, h: int) -> None:
    if w < 1 or h < 1:
        raise ConfigError(f"target size must be >= 1, got {w}x{h}")


def resize_image(src: np.ndarray, w: int, h: int) -> np.ndarray:
    """Bilinear resize of a grayscale or RGB image; same-size is an exact copy."""
    _check_target(w, h)
    sh, sw = src.shape[:2]
    if (sw, sh) == (w, h):
        return src.copy()
    out = PILImage.fromarray(src).resize((w, h), PILImage.Resampling.BILINEAR)
    return np.asarray(out, dtype=np.uint8)


def resize_mask(m: np.ndarray, w: int, h: int) -> np.ndarray:
    """Nearest-neighbor resize of a binary mask; the result stays in {0, 1}."""
    _check_target(w, h)
    m = as_mask(m)
    sh, sw = m.shape
    if (sw, sh) == (w, h):
        return m.copy()
    out = PILImage.fromarray(m).resize((w, h), PILImage.Resampling.NEAREST)
    return np.asarray(out, dtype=np.uint8)


def resize(src: np.ndarray, w: int, h: int) -> np.ndarray:
    """Resize an image (bilinear) or binary mask (nearest neighbor).

    A 2-D array whose values are all in {0, 1} is treated as a mask so it
    stays binary; anything else is treated as an image.
    """
    if src.ndim == 2 and (src.size == 0 or src.max() <= 1):
        return resize_mask(src, w, h)
    return resize_image(src, w, h)


def overlay(
    img: np.ndarray,
    m: np.ndarray,
    alpha: float = 0.5,
    color: tuple[int, int, int] = (255, 0, 0),
) -> np.ndarray:
    """Alpha-blend ``color`` over the mask pixels of ``img``.

    Grayscale input is promoted to RGB. Off-mask pixels are unchanged.
    """
    if not 0.0 <= alpha <= 1.0:
        raise ConfigError(f"alpha must be in [0, 1], got {alpha}")
    m = as_mask(m)
    if img.shape[:2] != m.shape:
        raise DataError(f"dimension mismatch: {img.shape[:2]} vs {m.shape}")
    rgb = np.stack([img] * 3, axis=-1) if img.ndim == 2 else img.copy()
    sel = m.astype(bool)
    blended = (1.0 - alpha) * rgb[sel].astype(np.float64) + alpha * np.asarray(
        color, dtype=np.float64
    )
    rgb[sel] = np.floor(blended + 0.5).astype(np.uint8)
    return rgb
