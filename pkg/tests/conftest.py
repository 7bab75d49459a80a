"""Shared fixtures and the independent brute-force oracles.

The oracles deliberately reimplement the operations with plain Python loops
(or direct set arithmetic) so they stay independent of the library paths
they check.
"""

from __future__ import annotations

import json
from collections import deque

import numpy as np
import pytest

from crackseg.lowrank import tensor_to_json


# --- brute force oracles ----------------------------------------------------


def pixelwise_difference(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    out = np.zeros_like(a)
    for y in range(a.shape[0]):
        for x in range(a.shape[1]):
            out[y, x] = 1 if a[y, x] == 1 and b[y, x] == 0 else 0
    return out


def pixelwise_intersection(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    out = np.zeros_like(a)
    for y in range(a.shape[0]):
        for x in range(a.shape[1]):
            out[y, x] = 1 if a[y, x] == 1 and b[y, x] == 1 else 0
    return out


def brute_force_erode(m: np.ndarray, se: np.ndarray) -> np.ndarray:
    """Loop-based erosion with out-of-bounds cells treated as background."""
    h, w = m.shape
    k = se.shape[0]
    c = k // 2
    out = np.zeros_like(m)
    for y in range(h):
        for x in range(w):
            keep = True
            for i in range(k):
                for j in range(k):
                    if not se[i, j]:
                        continue
                    yy, xx = y + i - c, x + j - c
                    if yy < 0 or yy >= h or xx < 0 or xx >= w or m[yy, xx] == 0:
                        keep = False
                        break
                if not keep:
                    break
            out[y, x] = 1 if keep else 0
    return out


def flood_fill_components(m: np.ndarray) -> list[dict]:
    """8-connected components via BFS, ordered by first pixel in row-major scan.

    Returns dicts with 'pixels' (set of (y, x)), 'area' and 'bbox' (x, y, w, h).
    """
    h, w = m.shape
    seen = np.zeros_like(m, dtype=bool)
    comps = []
    for y in range(h):
        for x in range(w):
            if m[y, x] == 1 and not seen[y, x]:
                queue = deque([(y, x)])
                seen[y, x] = True
                pixels = set()
                while queue:
                    cy, cx = queue.popleft()
                    pixels.add((cy, cx))
                    for dy in (-1, 0, 1):
                        for dx in (-1, 0, 1):
                            ny, nx = cy + dy, cx + dx
                            if 0 <= ny < h and 0 <= nx < w and m[ny, nx] == 1 and not seen[ny, nx]:
                                seen[ny, nx] = True
                                queue.append((ny, nx))
                ys = [p[0] for p in pixels]
                xs = [p[1] for p in pixels]
                comps.append(
                    {
                        "pixels": pixels,
                        "area": len(pixels),
                        "bbox": (min(xs), min(ys), max(xs) - min(xs) + 1, max(ys) - min(ys) + 1),
                    }
                )
    return comps


def random_mask(rng: np.random.Generator, h: int, w: int, density: float = 0.5) -> np.ndarray:
    return (rng.random((h, w)) < density).astype(np.uint8)


# --- toy model graphs -------------------------------------------------------


def _conv_tensor(weights) -> dict:
    return tensor_to_json(np.asarray(weights, dtype=np.float64))


def write_toy_segmentation_model(dirpath, input_size=(48, 48)) -> str:
    """Write a tiny encoder/decoder graph pair plus manifest.

    The encoder passes the normalized gray image through channel 0 of a
    4-channel conv; the decoder maps dark pixels to high probability and lets
    prompt channels push the logit up or down.
    """
    w, h = input_size
    enc_w = np.zeros((4, 1, 3, 3))
    enc_w[0, 0, 1, 1] = 1.0  # identity tap
    enc_w[1, 0, 1, 1] = 0.5
    encoder = {
        "format": "crackgraph/1",
        "name": "toy-encoder",
        "inputs": [{"name": "image", "channels": 1}],
        "output": "embedding",
        "nodes": [
            {
                "name": "embedding",
                "op": "conv2d",
                "input": "image",
                "weight": "c1.w",
                "stride": 1,
                "padding": 1,
            }
        ],
        "tensors": {"c1.w": _conv_tensor(enc_w)},
    }
    dec_w = np.zeros((1, 7, 1, 1))
    dec_w[0, 0, 0, 0] = -6.0  # dark image pixels (negative after norm) -> high logit
    dec_w[0, 4, 0, 0] = 0.5   # box channel
    dec_w[0, 5, 0, 0] = 8.0   # positive point
    dec_w[0, 6, 0, 0] = -12.0  # negative point
    decoder = {
        "format": "crackgraph/1",
        "name": "toy-decoder",
        "inputs": [{"name": "embedding", "channels": 4}, {"name": "prompts", "channels": 3}],
        "output": "probs",
        "nodes": [
            {"name": "cat", "op": "concat", "inputs": ["embedding", "prompts"]},
            {
                "name": "logits",
                "op": "conv2d",
                "input": "cat",
                "weight": "d1.w",
                "bias": "d1.b",
                "stride": 1,
                "padding": 0,
            },
            {"name": "probs", "op": "sigmoid", "input": "logits"},
        ],
        "tensors": {"d1.w": _conv_tensor(dec_w), "d1.b": _conv_tensor([-1.0])},
    }
    manifest = {
        "format": "crackmanifest/1",
        "kind": "segmentation",
        "input_size": [w, h],
        "normalization": {"mean": 127.5, "std": 127.5},
        "capabilities": {"boxes": True, "points": True},
        "encoder": "encoder.json",
        "decoder": "decoder.json",
        "mask_threshold": 0.5,
    }
    (dirpath / "encoder.json").write_text(json.dumps(encoder))
    (dirpath / "decoder.json").write_text(json.dumps(decoder))
    (dirpath / "manifest.json").write_text(json.dumps(manifest))
    return str(dirpath / "manifest.json")


def write_toy_kernel_predictor(dirpath, predicted_value=7.3, input_size=(32, 32)) -> str:
    """Predictor graph whose output is a constant, for snap/range tests."""
    graph = {
        "format": "crackgraph/1",
        "name": "toy-predictor",
        "inputs": [{"name": "map", "channels": 1}],
        "output": "size",
        "nodes": [
            {
                "name": "c1",
                "op": "conv2d",
                "input": "map",
                "weight": "c1.w",
                "stride": 1,
                "padding": 1,
            },
            {"name": "a1", "op": "relu", "input": "c1"},
            {"name": "pool", "op": "global_avgpool", "input": "a1"},
            {"name": "size", "op": "dense", "input": "pool", "weight": "f.w", "bias": "f.b"},
        ],
        "tensors": {
            "c1.w": _conv_tensor(np.zeros((2, 1, 3, 3))),
            "f.w": _conv_tensor(np.zeros((1, 2))),
            "f.b": _conv_tensor([predicted_value]),
        },
    }
    manifest = {
        "format": "crackmanifest/1",
        "kind": "kernel-predictor",
        "input_size": list(input_size),
        "normalization": {"mean": 0.0, "std": 1.0},
        "graph": "predictor.json",
    }
    (dirpath / "predictor.json").write_text(json.dumps(graph))
    (dirpath / "predictor_manifest.json").write_text(json.dumps(manifest))
    return str(dirpath / "predictor_manifest.json")


def write_toy_detector(dirpath, input_size=(64, 64)) -> str:
    """Detector graph: sigmoid of a negatively scaled gray image, so dark
    regions light up the heatmap."""
    w_t = np.zeros((1, 1, 1, 1))
    w_t[0, 0, 0, 0] = -6.0
    graph = {
        "format": "crackgraph/1",
        "name": "toy-detector",
        "inputs": [{"name": "image", "channels": 1}],
        "output": "heat",
        "nodes": [
            {
                "name": "scaled",
                "op": "conv2d",
                "input": "image",
                "weight": "w",
                "stride": 1,
                "padding": 0,
            },
            {"name": "heat", "op": "sigmoid", "input": "scaled"},
        ],
        "tensors": {"w": _conv_tensor(w_t)},
    }
    manifest = {
        "format": "crackmanifest/1",
        "kind": "detector",
        "input_size": list(input_size),
        "normalization": {"mean": 127.5, "std": 127.5},
        "graph": "detector.json",
        "detect_threshold": 0.5,
    }
    (dirpath / "detector.json").write_text(json.dumps(graph))
    (dirpath / "detector_manifest.json").write_text(json.dumps(manifest))
    return str(dirpath / "detector_manifest.json")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
