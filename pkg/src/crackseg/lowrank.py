"""Low-rank convolution adapters over small dense tensors.

An adapter wraps a frozen base conv weight with a trainable pair of factors:
a down-projection conv that shares the base kernel geometry and a 1x1
up-projection. The adapted forward pass is

    h = conv(x, base) + conv(conv(x, down), up)

and the factor product can be folded back into the base weight exactly, so a
merged checkpoint runs at the original cost. The up factor starts at zero,
which makes a fresh adapter an exact identity over the base conv.

Tensors are plain float64 numpy arrays in (N, C, H, W) / (Cout, Cin, kh, kw)
layout.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DataError


def conv2d(
    x: np.ndarray,
    w: np.ndarray,
    stride: int = 1,
    padding: int = 0,
    bias: np.ndarray | None = None,
) -> np.ndarray:
    """Direct 2-D cross-correlation of (N,Cin,H,W) input with (Cout,Cin,kh,kw) weight."""
    x = np.asarray(x, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    if x.ndim != 4 or w.ndim != 4:
        raise DataError(f"conv2d expects 4-D tensors, got {x.shape} and {w.shape}")
    n, cin, h, wd = x.shape
    cout, cin_w, kh, kw = w.shape
    if cin != cin_w:
        raise DataError(f"channel mismatch: input {cin} vs weight {cin_w}")
    if h + 2 * padding < kh or wd + 2 * padding < kw:
        raise DataError("kernel larger than padded input")
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    windows = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(2, 3))
    windows = windows[:, :, ::stride, ::stride, :, :]
    out = np.einsum("nchwij,ocij->nohw", windows, w, optimize=True)
    if bias is not None:
        out = out + np.asarray(bias, dtype=np.float64)[None, :, None, None]
    return out


@dataclass(frozen=True)
class ConvLoRAAdapter:
    """Frozen base conv weight plus low-rank down/up factors.

    ``base`` has shape (Cout, Cin, kh, kw), ``down`` (rank, Cin, kh, kw) and
    ``up`` (Cout, rank, 1, 1). The rank should be well below min(Cin, Cout)
    for the factorization to save parameters; only ``down`` and ``up`` are
    considered trainable. Adapters carry no bias of their own.
    """

    base: np.ndarray
    down: np.ndarray
    up: np.ndarray
    rank: int
    stride: int = 1
    padding: int = 0
    bias: np.ndarray | None = None

    def __post_init__(self):
        cout, cin, kh, kw = self.base.shape
        if self.rank < 1:
            raise ConfigError(f"rank must be >= 1, got {self.rank}")
        if self.down.shape != (self.rank, cin, kh, kw):
            raise DataError(
                f"down factor shape {self.down.shape} != {(self.rank, cin, kh, kw)}"
            )
        if self.up.shape != (cout, self.rank, 1, 1):
            raise DataError(f"up factor shape {self.up.shape} != {(cout, self.rank, 1, 1)}")

    @property
    def out_channels(self) -> int:
        return self.base.shape[0]

    @property
    def in_channels(self) -> int:
        return self.base.shape[1]


def init_adapter(
    base: np.ndarray,
    rng: np.random.Generator,
    rank: int = 8,
    stride: int = 1,
    padding: int = 0,
    bias: np.ndarray | None = None,
    std: float = 0.02,
) -> ConvLoRAAdapter:
    """Fresh adapter: gaussian down factor, zero up factor (exact identity).

    Rank 8 is the sweet spot for segmentation quality per the experiments
    this design follows; pass a smaller rank when parameters are tighter.
    """
    cout, cin, kh, kw = np.asarray(base).shape
    down = rng.normal(0.0, std, size=(rank, cin, kh, kw))
    up = np.zeros((cout, rank, 1, 1))
    return ConvLoRAAdapter(
        base=np.asarray(base, dtype=np.float64),
        down=down,
        up=up,
        rank=rank,
        stride=stride,
        padding=padding,
        bias=bias,
    )


def adapter_forward(a: ConvLoRAAdapter, x: np.ndarray) -> np.ndarray:
    """Adapted conv: base path plus the up(down(x)) low-rank correction."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 4 or x.shape[1] != a.in_channels:
        raise DataError(f"input shape {x.shape} incompatible with Cin={a.in_channels}")
    h = conv2d(x, a.base, a.stride, a.padding, a.bias)
    low = conv2d(x, a.down, a.stride, a.padding)
    return h + conv2d(low, a.up, stride=1, padding=0)


def merge(a: ConvLoRAAdapter) -> np.ndarray:
    """Fold the low-rank factors into one conv weight.

    Convolving with the result is algebraically identical to
    :func:`adapter_forward` because the up projection is 1x1.
    """
    return a.base + np.einsum("or,ricd->oicd", a.up[:, :, 0, 0], a.down)


def trainable_param_count(a: ConvLoRAAdapter) -> int:
    """Number of trainable values: the two factor tensors, base excluded."""
    return int(a.down.size + a.up.size)


def total_param_count(a: ConvLoRAAdapter) -> int:
    return int(a.base.size + a.down.size + a.up.size)


# --- adapter bundle files -------------------------------------------------
#
# Adapters travel as a JSON bundle mapping layer names to their factor
# tensors; the export tooling folds these into checkpoint weights.

ADAPTER_FORMAT = "crackadapters/1"


def tensor_to_json(t: np.ndarray) -> dict:
    t = np.asarray(t, dtype=np.float64)
    return {"shape": list(t.shape), "data": [float(v) for v in t.ravel()]}


def tensor_from_json(obj: dict) -> np.ndarray:
    data = np.asarray(obj["data"], dtype=np.float64)
    return data.reshape(obj["shape"])


def adapters_to_json(adapters: dict[str, ConvLoRAAdapter]) -> dict:
    layers = {}
    for name, a in adapters.items():
        layers[name] = {
            "rank": a.rank,
            "down": tensor_to_json(a.down),
            "up": tensor_to_json(a.up),
        }
    return {"format": ADAPTER_FORMAT, "layers": layers}


def save_adapters(path, adapters: dict[str, ConvLoRAAdapter]) -> None:
    """Write the trainable factors as a bundle the export tooling folds in."""
    import json
    from pathlib import Path

    Path(path).write_text(json.dumps(adapters_to_json(adapters)))


def load_adapter_factors(path) -> dict[str, dict]:
    """Read a factor bundle back as {layer: {rank, down, up}} with arrays."""
    import json
    from pathlib import Path

    doc = json.loads(Path(path).read_text())
    if doc.get("format") != ADAPTER_FORMAT:
        raise DataError(f"{path}: unsupported adapter bundle format {doc.get('format')!r}")
    return {
        name: {
            "rank": layer["rank"],
            "down": tensor_from_json(layer["down"]),
            "up": tensor_from_json(layer["up"]),
        }
        for name, layer in doc.get("layers", {}).items()
    }
