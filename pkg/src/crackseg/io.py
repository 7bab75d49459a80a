"""PNG input/output for images and binary masks.

Masks are stored as 8-bit grayscale PNGs with values {0, 255}; on load any
pixel >= 128 becomes 1.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image as PILImage

from .errors import DataError


def load_image(path: str | Path) -> np.ndarray:
    """Load a PNG as uint8 grayscale (H, W) or RGB (H, W, 3)."""
    try:
        with PILImage.open(path) as im:
            if im.mode in ("L", "I;16", "LA", "1"):
                im = im.convert("L")
            elif im.mode != "RGB":
                im = im.convert("RGB")
            return np.asarray(im, dtype=np.uint8)
    except (OSError, ValueError) as exc:
        raise DataError(f"cannot read image {path}: {exc}") from exc


def save_image(path: str | Path, img: np.ndarray) -> None:
    PILImage.fromarray(np.asarray(img, dtype=np.uint8)).save(path)


def load_mask(path: str | Path) -> np.ndarray:
    """Load a mask PNG, thresholding grayscale at 128 into {0, 1}."""
    try:
        with PILImage.open(path) as im:
            gray = np.asarray(im.convert("L"), dtype=np.uint8)
    except (OSError, ValueError) as exc:
        raise DataError(f"cannot read mask {path}: {exc}") from exc
    return (gray >= 128).astype(np.uint8)


def save_mask(path: str | Path, m: np.ndarray) -> None:
    m = np.asarray(m, dtype=np.uint8)
    PILImage.fromarray(m * 255).save(path)
