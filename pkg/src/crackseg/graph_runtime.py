"""Executor for serialized operator graphs.

The interchange format is a JSON document listing nodes in topological order
over named values, with all weights inlined as flat float arrays:

    {
      "format": "crackgraph/1",
      "name": "encoder",
      "inputs": [{"name": "image", "channels": 1}],
      "output": "embedding",
      "nodes": [
        {"name": "c1", "op": "conv2d", "input": "image",
         "weight": "c1.w", "bias": "c1.b", "stride": 1, "padding": 1},
        {"name": "embedding", "op": "relu", "input": "c1"}
      ],
      "tensors": {"c1.w": {"shape": [4,1,3,3], "data": [...]}, ...}
    }

Supported ops: conv2d, relu, sigmoid, add, concat, avgpool2d,
global_avgpool, upsample_nearest, dense. Activations are 4-D (N, C, H, W)
except after dense, which flattens to (N, F). The executor is pure numpy and
deterministic.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .errors import BackendError, DataError
from .lowrank import conv2d, tensor_from_json

GRAPH_FORMAT = "crackgraph/1"


class Graph:
    """A loaded operator graph ready to execute."""

    def __init__(self, doc: dict, source: str = "<memory>"):
        if doc.get("format") != GRAPH_FORMAT:
            raise DataError(f"{source}: unsupported graph format {doc.get('format')!r}")
        self.name = doc.get("name", "graph")
        self.input_names = [inp["name"] for inp in doc["inputs"]]
        self.input_channels = {
            inp["name"]: inp.get("channels") for inp in doc["inputs"]
        }
        self.output_name = doc["output"]
        self.nodes = doc["nodes"]
        self.tensors = {k: tensor_from_json(v) for k, v in doc.get("tensors", {}).items()}
        self.source = source
        names = set(self.input_names)
        for node in self.nodes:
            for ref in self._node_inputs(node):
                if ref not in names:
                    raise DataError(
                        f"{source}: node {node.get('name')} reads undefined value {ref!r}"
                    )
            names.add(node["name"])
        if self.output_name not in names:
            raise DataError(f"{source}: output {self.output_name!r} never produced")

    @staticmethod
    def _node_inputs(node: dict) -> list[str]:
        if "inputs" in node:
            return list(node["inputs"])
        return [node["input"]]

    def _weight(self, ref: str) -> np.ndarray:
        try:
            return self.tensors[ref]
        except KeyError:
            raise DataError(f"{self.source}: missing tensor {ref!r}") from None

    def run(self, inputs: dict[str, np.ndarray]) -> np.ndarray:
        """Execute the graph on named input tensors and return the output."""
        values: dict[str, np.ndarray] = {}
        for name in self.input_names:
            if name not in inputs:
                raise BackendError(f"graph {self.name}: missing input {name!r}")
            values[name] = np.asarray(inputs[name], dtype=np.float64)
        for node in self.nodes:
            op = node["op"]
            args = [values[ref] for ref in self._node_inputs(node)]
            try:
                values[node["name"]] = self._apply(op, node, args)
            except (KeyError, ValueError, IndexError) as exc:
                raise BackendError(
                    f"graph {self.name}: node {node.get('name')} ({op}) failed: {exc}"
                ) from exc
        return values[self.output_name]

    def _apply(self, op: str, node: dict, args: list[np.ndarray]) -> np.ndarray:
        x = args[0]
        if op == "conv2d":
            bias = self._weight(node["bias"]) if node.get("bias") else None
            return conv2d(
                x,
                self._weight(node["weight"]),
                stride=node.get("stride", 1),
                padding=node.get("padding", 0),
                bias=bias,
            )
        if op == "relu":
            return np.maximum(x, 0.0)
        if op == "sigmoid":
            return 1.0 / (1.0 + np.exp(-x))
        if op == "add":
            return args[0] + args[1]
        if op == "concat":
            return np.concatenate(args, axis=1)
        if op == "avgpool2d":
            k = node["kernel"]
            s = node.get("stride", k)
            n, c, h, w = x.shape
            ho, wo = (h - k) // s + 1, (w - k) // s + 1
            win = np.lib.stride_tricks.sliding_window_view(x, (k, k), axis=(2, 3))
            return win[:, :, ::s, ::s].mean(axis=(-2, -1))[:, :, :ho, :wo]
        if op == "global_avgpool":
            return x.mean(axis=(2, 3), keepdims=True)
        if op == "upsample_nearest":
            s = node["scale"]
            return x.repeat(s, axis=2).repeat(s, axis=3)
        if op == "dense":
            w = self._weight(node["weight"])
            flat = x.reshape(x.shape[0], -1)
            out = flat @ w.T
            if node.get("bias"):
                out = out + self._weight(node["bias"])[None, :]
            return out
        raise BackendError(f"graph {self.name}: unsupported operator {op!r}")


def load_graph(path: str | Path) -> Graph:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read graph {path}: {exc}") from exc
    return Graph(doc, source=str(path))
