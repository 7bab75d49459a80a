"""Model backends: the segmentation and detection interfaces, a deterministic
synthetic oracle for testing, and a neural backend that executes exported
operator graphs.

The synthetic oracle reads everything it needs out of the image itself: gray
levels are split into four bands that encode where the "model" is right,
where it misses and where it hallucinates. Because the bands travel with the
pixels, the oracle behaves consistently under cropping, and its point
semantics are chosen so that prompt-based refinement provably helps:

* gray <  64          true crack, segmented correctly
* 64  <= gray < 128   true crack the model misses until a positive point
                      lands on its connected component
* 128 <= gray < 192   hallucinated region, removed when a negative point
                      lands on its connected component
* gray >= 192         background

Ground truth is everything below 128.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import numpy as np

from .errors import BackendError, ConfigError, DataError
from .graph_runtime import Graph, load_graph
from .imgproc import BoundingBox, as_mask, find_contours, resize_image
from .io import load_mask
from .prompts import PointPrompt

TRUTH_THRESHOLD = 128
VISIBLE_LOW = 64
PHANTOM_HIGH = 192

CRACK_GRAY = 32
MISSED_GRAY = 96
PHANTOM_GRAY = 160
BACKGROUND_GRAY = 224

_CONN8 = np.ones((3, 3), dtype=bool)

_backend_counter = itertools.count(1)


@dataclass(frozen=True)
class ImageEmbedding:
    """Opaque encoder output, reusable across decode calls on one image."""

    backend_id: str
    width: int
    height: int
    blob: Any
    auto_resized: bool = False


class SegmentationBackend:
    """Prompt-conditioned segmentation model interface.

    ``input_size`` is the (w, h) the model consumes, or None for a model that
    works at the native resolution of whatever it is given. Decoded masks
    always have the embedding's dimensions.
    """

    input_size: tuple[int, int] | None = None
    supports_boxes: bool = True
    supports_points: bool = True
    concurrent_safe: bool = False
    backend_id: str = "abstract"

    def encode(self, image: np.ndarray) -> ImageEmbedding:
        raise NotImplementedError

    def decode(
        self,
        emb: ImageEmbedding,
        boxes: list[BoundingBox],
        points: list[PointPrompt] | None = None,
    ) -> np.ndarray:
        raise NotImplementedError

    def _check_embedding(self, emb: ImageEmbedding) -> None:
        if emb.backend_id != self.backend_id:
            raise BackendError(
                f"embedding from {emb.backend_id!r} fed to {self.backend_id!r}",
                stage="decode",
            )


class BoxDetector:
    """Detector interface: image -> list of (box, confidence)."""

    def detect(self, image: np.ndarray) -> list[tuple[BoundingBox, float]]:
        raise NotImplementedError


def _to_gray(image: np.ndarray) -> np.ndarray:
    if image.ndim == 2:
        return image
    # ITU-R 601 luma, matching PIL's "L" conversion closely enough for bands.
    return np.floor(
        image[..., 0] * 0.299 + image[..., 1] * 0.587 + image[..., 2] * 0.114 + 0.5
    ).astype(np.uint8)


def _box_union(boxes: list[BoundingBox], shape: tuple[int, int]) -> np.ndarray:
    h, w = shape
    union = np.zeros((h, w), dtype=bool)
    for b in boxes:
        x1, y1 = max(b.x, 0), max(b.y, 0)
        x2, y2 = min(b.x2, w), min(b.y2, h)
        if x2 > x1 and y2 > y1:
            union[y1:y2, x1:x2] = True
    return union


# --- synthetic oracle -------------------------------------------------------


@dataclass(frozen=True)
class Blob:
    """One corruption region: an ellipse or rectangle added to or cut from
    the truth."""

    kind: str  # "add" (hallucination) or "remove" (missed crack)
    shape: str  # "ellipse" or "rect"
    params: tuple[int, ...]  # ellipse: (cx, cy, rx, ry); rect: (x, y, w, h)

    def rasterize(self, height: int, width: int) -> np.ndarray:
        out = np.zeros((height, width), dtype=bool)
        if self.shape == "rect":
            x, y, w, h = self.params
            out[max(y, 0) : min(y + h, height), max(x, 0) : min(x + w, width)] = True
        elif self.shape == "ellipse":
            cx, cy, rx, ry = self.params
            yy, xx = np.ogrid[:height, :width]
            out = ((xx - cx) / max(rx, 1e-9)) ** 2 + ((yy - cy) / max(ry, 1e-9)) ** 2 <= 1.0
        else:
            raise ConfigError(f"unknown blob shape {self.shape!r}")
        return out


@dataclass(frozen=True)
class SyntheticOracleSpec:
    """Hidden truth plus the corruption blobs that shape the oracle's output."""

    truth: np.ndarray
    blobs: tuple[Blob, ...] = ()
    seed: int = 0

    def render_image(self) -> np.ndarray:
        """Paint the banded grayscale image that the oracle backend decodes."""
        truth = as_mask(self.truth).astype(bool)
        h, w = truth.shape
        img = np.full((h, w), BACKGROUND_GRAY, dtype=np.uint8)
        img[truth] = CRACK_GRAY
        for blob in self.blobs:
            region = blob.rasterize(h, w)
            if blob.kind == "remove":
                img[region & truth] = MISSED_GRAY
            elif blob.kind == "add":
                img[region & ~truth] = PHANTOM_GRAY
            else:
                raise ConfigError(f"unknown blob kind {blob.kind!r}")
        return img


def save_synthetic_spec(spec: SyntheticOracleSpec, path: str | Path) -> None:
    from .io import save_mask

    path = Path(path)
    truth_name = path.stem + ".truth.png"
    save_mask(path.parent / truth_name, as_mask(spec.truth))
    doc = {
        "format": "cracksynth/1",
        "truth": truth_name,
        "seed": spec.seed,
        "blobs": [
            {"kind": b.kind, "shape": b.shape, "params": list(b.params)}
            for b in spec.blobs
        ],
    }
    path.write_text(json.dumps(doc, indent=2, sort_keys=True))


def load_synthetic_spec(path: str | Path) -> SyntheticOracleSpec:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read synthetic spec {path}: {exc}") from exc
    if doc.get("format") != "cracksynth/1":
        raise DataError(f"{path}: unsupported fixture format {doc.get('format')!r}")
    truth = load_mask(path.parent / doc["truth"])
    blobs = tuple(
        Blob(kind=b["kind"], shape=b["shape"], params=tuple(b["params"]))
        for b in doc.get("blobs", [])
    )
    return SyntheticOracleSpec(truth=truth, blobs=blobs, seed=doc.get("seed", 0))


class SyntheticOracleBackend(SegmentationBackend):
    """Deterministic test double driven entirely by the image's gray bands.

    Works at native resolution, so crops of fixture images keep their
    semantics. Safe for concurrent use; all state is in the embedding.
    """

    supports_boxes = True
    supports_points = True
    concurrent_safe = True
    input_size = None

    def __init__(self):
        self.backend_id = f"synthetic#{next(_backend_counter)}"

    def encode(self, image: np.ndarray) -> ImageEmbedding:
        gray = _to_gray(np.asarray(image, dtype=np.uint8))
        h, w = gray.shape
        return ImageEmbedding(
            backend_id=self.backend_id, width=w, height=h, blob=gray
        )

    def decode(self, emb, boxes, points=None) -> np.ndarray:
        from scipy import ndimage

        self._check_embedding(emb)
        gray = emb.blob
        truth = gray < TRUTH_THRESHOLD
        visible = (gray < VISIBLE_LOW) | (
            (gray >= TRUTH_THRESHOLD) & (gray < PHANTOM_HIGH)
        )
        out = visible.copy()
        if points:
            phantom = visible & ~truth
            truth_labels, _ = ndimage.label(truth, structure=_CONN8)
            phantom_labels, _ = ndimage.label(phantom, structure=_CONN8)
            for p in points:
                x = min(max(int(p.x), 0), emb.width - 1)
                y = min(max(int(p.y), 0), emb.height - 1)
                if p.label == 0 and phantom_labels[y, x] > 0:
                    out &= phantom_labels != phantom_labels[y, x]
                elif p.label == 1 and truth_labels[y, x] > 0:
                    out |= truth_labels == truth_labels[y, x]
        out &= _box_union(boxes, gray.shape)
        return out.astype(np.uint8)


def oracle_truth(image: np.ndarray) -> np.ndarray:
    """Ground truth mask encoded in a synthetic fixture image."""
    return (_to_gray(np.asarray(image, dtype=np.uint8)) < TRUTH_THRESHOLD).astype(
        np.uint8
    )


class GroundTruthBoxDetector(BoxDetector):
    """Returns the tight bounding rectangle of every GT component (conf 1.0)."""

    def __init__(self, gt_mask: np.ndarray):
        self.gt_mask = as_mask(gt_mask)

    def detect(self, image: np.ndarray) -> list[tuple[BoundingBox, float]]:
        if image.shape[:2] != self.gt_mask.shape:
            raise DataError(
                f"image {image.shape[:2]} does not match GT mask {self.gt_mask.shape}"
            )
        return [(r.bbox, 1.0) for r in find_contours(self.gt_mask)]


# --- neural backend ---------------------------------------------------------

MANIFEST_FORMAT = "crackmanifest/1"


def load_manifest(path: str | Path) -> dict:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read manifest {path}: {exc}") from exc
    if doc.get("format") != MANIFEST_FORMAT:
        raise DataError(f"{path}: unsupported manifest format {doc.get('format')!r}")
    return doc


class _NeuralCommon:
    def __init__(self, manifest_path: str | Path):
        self.manifest_path = Path(manifest_path)
        self.manifest = load_manifest(self.manifest_path)
        norm = self.manifest.get("normalization", {})
        self.norm_mean = float(norm.get("mean", 0.0))
        self.norm_std = float(norm.get("std", 1.0))

    def _graph(self, key: str) -> Graph:
        rel = self.manifest.get(key)
        if not rel:
            raise DataError(f"{self.manifest_path}: manifest lacks a {key!r} graph")
        return load_graph(self.manifest_path.parent / rel)

    def _prepare(self, image: np.ndarray, size: tuple[int, int]) -> tuple[np.ndarray, bool]:
        gray = _to_gray(np.asarray(image, dtype=np.uint8))
        h, w = gray.shape
        resized = (w, h) != size
        if resized:
            gray = resize_image(gray, size[0], size[1])
        x = (gray.astype(np.float64) - self.norm_mean) / self.norm_std
        return x[None, None, :, :], resized


class NeuralSegmentationBackend(SegmentationBackend, _NeuralCommon):
    """Runs exported encoder/decoder graphs described by a JSON manifest."""

    def __init__(self, manifest_path: str | Path):
        _NeuralCommon.__init__(self, manifest_path)
        if self.manifest.get("kind") != "segmentation":
            raise ConfigError(
                f"{self.manifest_path}: expected kind 'segmentation', got "
                f"{self.manifest.get('kind')!r}"
            )
        self.input_size = tuple(self.manifest["input_size"])
        caps = self.manifest.get("capabilities", {})
        self.supports_boxes = bool(caps.get("boxes", True))
        self.supports_points = bool(caps.get("points", True))
        self.concurrent_safe = True
        self.mask_threshold = float(self.manifest.get("mask_threshold", 0.5))
        self.encoder = self._graph("encoder")
        self.decoder = self._graph("decoder")
        self.backend_id = f"neural#{next(_backend_counter)}"

    def encode(self, image: np.ndarray) -> ImageEmbedding:
        x, resized = self._prepare(image, self.input_size)
        try:
            emb = self.encoder.run({self.encoder.input_names[0]: x})
        except BackendError:
            raise
        except Exception as exc:
            raise BackendError(str(exc), stage="encode") from exc
        return ImageEmbedding(
            backend_id=self.backend_id,
            width=self.input_size[0],
            height=self.input_size[1],
            blob=emb,
            auto_resized=resized,
        )

    def _prompt_raster(self, boxes, points) -> np.ndarray:
        w, h = self.input_size
        raster = np.zeros((1, 3, h, w), dtype=np.float64)
        raster[0, 0][_box_union(boxes, (h, w))] = 1.0
        for p in points or []:
            x = min(max(int(p.x), 0), w - 1)
            y = min(max(int(p.y), 0), h - 1)
            raster[0, 1 if p.label == 1 else 2, y, x] = 1.0
        return raster

    def decode(self, emb, boxes, points=None) -> np.ndarray:
        self._check_embedding(emb)
        if points and not self.supports_points:
            raise BackendError("model does not accept point prompts", stage="decode")
        if boxes and not self.supports_boxes:
            raise BackendError("model does not accept box prompts", stage="decode")
        inputs = {
            "embedding": emb.blob,
            "prompts": self._prompt_raster(boxes, points),
        }
        try:
            probs = self.decoder.run(inputs)
        except BackendError:
            raise
        except Exception as exc:
            raise BackendError(str(exc), stage="decode") from exc
        mask = np.asarray(probs)[0, 0] >= self.mask_threshold
        if mask.shape != (emb.height, emb.width):
            raise BackendError(
                f"decoder produced {mask.shape}, expected {(emb.height, emb.width)}",
                stage="decode",
            )
        return mask.astype(np.uint8)


class NeuralBoxDetector(BoxDetector, _NeuralCommon):
    """Detector graph producing a heatmap; boxes are its thresholded components."""

    def __init__(self, manifest_path: str | Path):
        _NeuralCommon.__init__(self, manifest_path)
        if self.manifest.get("kind") != "detector":
            raise ConfigError(
                f"{self.manifest_path}: expected kind 'detector', got "
                f"{self.manifest.get('kind')!r}"
            )
        self.input_size = tuple(self.manifest["input_size"])
        self.threshold = float(self.manifest.get("detect_threshold", 0.5))
        self.graph = self._graph("graph")

    def detect(self, image: np.ndarray) -> list[tuple[BoundingBox, float]]:
        ih, iw = image.shape[:2]
        x, _ = self._prepare(image, self.input_size)
        try:
            heat = np.asarray(self.graph.run({self.graph.input_names[0]: x}))[0, 0]
        except BackendError:
            raise
        except Exception as exc:
            raise BackendError(str(exc), stage="detect") from exc
        hits = (heat >= self.threshold).astype(np.uint8)
        sx = iw / self.input_size[0]
        sy = ih / self.input_size[1]
        out = []
        for region in find_contours(hits):
            b = region.bbox
            x1 = min(int(b.x * sx), iw - 1)
            y1 = min(int(b.y * sy), ih - 1)
            x2 = min(max(int(round(b.x2 * sx)), x1 + 1), iw)
            y2 = min(max(int(round(b.y2 * sy)), y1 + 1), ih)
            conf = float(min(1.0, max(0.0, heat[b.y : b.y2, b.x : b.x2].mean())))
            out.append((BoundingBox(x1, y1, x2 - x1, y2 - y1), conf))
        return out
