"""Declarative MLP / small-CNN specs and flat parameter vectors.

Every model keeps all of its trainable weights in one contiguous float64
vector (:class:`ParamVector`). Curves and planes in weight space are plain
vector arithmetic on these.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np

from .autodiff import Tape, Tensor

__all__ = [
    "SpecError",
    "ModelSpec",
    "LayoutEntry",
    "Layout",
    "ParamVector",
    "Network",
    "build_model",
    "forward",
    "count_params",
    "mlp_spec",
    "small_cnn_spec",
]

LAYER_KINDS = ("linear", "conv2d", "relu", "maxpool2d", "flatten")


class SpecError(ValueError):
    pass


@dataclass(frozen=True)
class ModelSpec:
    """Ordered layer descriptors plus the per-sample input shape.

    Layers are dicts such as ``{"type": "linear", "in": 4, "out": 8}`` or
    ``{"type": "conv2d", "in_ch": 1, "out_ch": 2, "kernel": 3, "stride": 1,
    "pad": 0}``. Linear and conv layers accept ``"bias": false``.
    """

    layers: tuple[dict, ...]
    input_shape: tuple[int, ...]

    def __init__(self, layers: Sequence[dict], input_shape: Sequence[int]):
        object.__setattr__(self, "layers", tuple(dict(layer) for layer in layers))
        object.__setattr__(self, "input_shape", tuple(int(d) for d in input_shape))

    def to_dict(self) -> dict:
        return {"layers": [dict(layer) for layer in self.layers], "input_shape": list(self.input_shape)}

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        extra = set(d) - {"layers", "input_shape"}
        if extra:
            raise SpecError(f"unknown model spec fields: {sorted(extra)}")
        return cls(d["layers"], d["input_shape"])

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "ModelSpec":
        return cls.from_dict(json.loads(text))

    def output_shape(self) -> tuple[int, ...]:
        shape = self.input_shape
        for i, layer in enumerate(self.layers):
            shape = _layer_out_shape(i, layer, shape)
        return shape


def _layer_out_shape(i: int, layer: dict, shape: tuple[int, ...]) -> tuple[int, ...]:
    kind = layer.get("type")
    where = f"layer {i} ({kind})"
    if kind not in LAYER_KINDS:
        raise SpecError(f"{where}: unknown layer type")
    if kind == "linear":
        if len(shape) != 1 or shape[0] != layer["in"]:
            raise SpecError(f"{where}: expects input ({layer['in']},) but previous layer gives {shape}")
        return (int(layer["out"]),)
    if kind == "conv2d":
        k, st, pad = layer["kernel"], layer.get("stride", 1), layer.get("pad", 0)
        if len(shape) != 3 or shape[0] != layer["in_ch"]:
            raise SpecError(f"{where}: expects {layer['in_ch']} input channels but previous layer gives {shape}")
        h, w = shape[1] + 2 * pad, shape[2] + 2 * pad
        if h < k or w < k:
            raise SpecError(f"{where}: spatial size {shape[1:]} (+pad {pad}) smaller than kernel {k}")
        return (int(layer["out_ch"]), (h - k) // st + 1, (w - k) // st + 1)
    if kind == "maxpool2d":
        k = layer["k"]
        if len(shape) != 3 or shape[1] < k or shape[2] < k:
            raise SpecError(f"{where}: cannot pool {shape} with k={k}")
        return (shape[0], shape[1] // k, shape[2] // k)
    if kind == "flatten":
        return (int(np.prod(shape)),)
    return shape  # relu


@dataclass(frozen=True)
class LayoutEntry:
    layer: int
    name: str
    shape: tuple[int, ...]
    offset: int

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))


@dataclass(frozen=True)
class Layout:
    """Manifest of the tensors packed in a flat parameter vector."""

    entries: tuple[LayoutEntry, ...]

    @property
    def size(self) -> int:
        return sum(e.size for e in self.entries)

    def to_list(self) -> list[dict]:
        return [{"layer": e.layer, "name": e.name, "shape": list(e.shape)} for e in self.entries]

    @classmethod
    def from_list(cls, items: list[dict]) -> "Layout":
        entries, off = [], 0
        for it in items:
            e = LayoutEntry(int(it["layer"]), str(it["name"]), tuple(int(d) for d in it["shape"]), off)
            entries.append(e)
            off += e.size
        return cls(tuple(entries))

    @classmethod
    def for_spec(cls, spec: ModelSpec) -> "Layout":
        items = []
        for i, layer in enumerate(spec.layers):
            bias = layer.get("bias", True)
            if layer["type"] == "linear":
                items.append({"layer": i, "name": "weight", "shape": [layer["in"], layer["out"]]})
                if bias:
                    items.append({"layer": i, "name": "bias", "shape": [layer["out"]]})
            elif layer["type"] == "conv2d":
                k = layer["kernel"]
                items.append({"layer": i, "name": "weight", "shape": [layer["out_ch"], layer["in_ch"], k, k]})
                if bias:
                    items.append({"layer": i, "name": "bias", "shape": [layer["out_ch"]]})
        return cls.from_list(items)


@dataclass(frozen=True)
class ParamVector:
    """Flat float64 weights plus the manifest describing how to unpack them."""

    values: np.ndarray
    layout: Layout = field(repr=False)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 1 or v.size != self.layout.size:
            raise ValueError(f"ParamVector: {v.shape} values for a layout of {self.layout.size}")
        object.__setattr__(self, "values", v)

    def __len__(self) -> int:
        return self.values.size

    def unflatten(self) -> dict[tuple[int, str], np.ndarray]:
        return {
            (e.layer, e.name): self.values[e.offset : e.offset + e.size].reshape(e.shape)
            for e in self.layout.entries
        }

    @classmethod
    def flatten(cls, tensors: dict[tuple[int, str], np.ndarray], layout: Layout) -> "ParamVector":
        parts = [np.asarray(tensors[(e.layer, e.name)], dtype=np.float64).reshape(-1) for e in layout.entries]
        return cls(np.concatenate(parts) if parts else np.zeros(0), layout)

    def with_values(self, values: np.ndarray) -> "ParamVector":
        return ParamVector(np.array(values, dtype=np.float64), self.layout)

    def copy(self) -> "ParamVector":
        return self.with_values(self.values)

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, ParamVector)
            and self.layout == other.layout
            and self.values.tobytes() == other.values.tobytes()
        )


class Network:
    """A built model: an immutable spec and its parameter layout.

    The network holds no weights; every forward pass takes the flat
    parameter values explicitly, so one network serves any point in weight
    space.
    """

    def __init__(self, spec: ModelSpec):
        spec.output_shape()  # raises on a non-composing spec
        self.spec = spec
        self.layout = Layout.for_spec(spec)
        out = spec.output_shape()
        self.num_classes = out[0] if len(out) == 1 else None

    def trace(self, tape: Tape, params: Tensor, x: Tensor) -> Tensor:
        """Record the forward pass on ``tape`` and return the output tensor."""
        if tuple(x.shape[1:]) != self.spec.input_shape:
            raise ValueError(f"forward: batch shape {x.shape} does not match input shape {self.spec.input_shape}")
        entries = {(e.layer, e.name): e for e in self.layout.entries}

        def view(i, name):
            e = entries[(i, name)]
            return tape.reshape(tape.slice(params, e.offset, e.offset + e.size), e.shape)

        h = x
        for i, layer in enumerate(self.spec.layers):
            kind = layer["type"]
            if kind == "linear":
                h = tape.matmul(h, view(i, "weight"))
                if layer.get("bias", True):
                    h = tape.add(h, view(i, "bias"))
            elif kind == "conv2d":
                h = tape.conv2d(h, view(i, "weight"), layer.get("stride", 1), layer.get("pad", 0))
                if layer.get("bias", True):
                    b = tape.reshape(view(i, "bias"), (1, layer["out_ch"], 1, 1))
                    h = tape.add(h, b)
            elif kind == "relu":
                h = tape.relu(h)
            elif kind == "maxpool2d":
                h = tape.max_pool2d(h, layer["k"])
            elif kind == "flatten":
                h = tape.flatten(h)
        return h

    def logits(self, params: np.ndarray | ParamVector, x: np.ndarray) -> np.ndarray:
        tape = Tape()
        out = self.trace(tape, tape.constant(_values(params)), tape.constant(x))
        return out.numpy()

    def predict(self, params, x: np.ndarray, chunk: int = 4096) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.shape[0] == 0:
            return np.zeros(0, dtype=np.int64)
        return np.concatenate(
            [self.logits(params, x[i : i + chunk]).argmax(axis=1) for i in range(0, x.shape[0], chunk)]
        )

    def loss_and_grad(self, params, x: np.ndarray, labels: np.ndarray, weights=None) -> tuple[float, np.ndarray]:
        """Mean (optionally per-sample weighted) cross-entropy and its gradient w.r.t. the flat params."""
        tape = Tape()
        p = tape.leaf(_values(params), trainable=True)
        logits = self.trace(tape, p, tape.constant(x))
        loss = tape.nll(tape.log_softmax(logits), labels, weights)
        (grad,) = tape.backward(loss)
        return float(loss.data), grad

    def init_params(self, seed: int) -> ParamVector:
        """Fan-in scaled uniform init: every tensor of a layer ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in))."""
        rng = np.random.default_rng(seed)
        tensors = {}
        for e in self.layout.entries:
            layer = self.spec.layers[e.layer]
            fan_in = layer["in"] if layer["type"] == "linear" else layer["in_ch"] * layer["kernel"] ** 2
            bound = 1.0 / math.sqrt(fan_in)
            tensors[(e.layer, e.name)] = rng.uniform(-bound, bound, size=e.shape)
        return ParamVector.flatten(tensors, self.layout)


def _values(params) -> np.ndarray:
    return params.values if isinstance(params, ParamVector) else np.asarray(params, dtype=np.float64)


def build_model(spec: ModelSpec, seed: int) -> tuple[Network, ParamVector]:
    net = Network(spec)
    return net, net.init_params(seed)


def forward(model: Network, params, batch: np.ndarray) -> np.ndarray:
    return model.logits(params, batch)


def count_params(spec: ModelSpec) -> int:
    return Layout.for_spec(spec).size


def mlp_spec(sizes: Sequence[int], bias: bool = True) -> ModelSpec:
    """Fully connected net ``sizes[0] -> ... -> sizes[-1]`` with relu between layers."""
    layers: list[dict[str, Any]] = []
    for i, (a, b) in enumerate(zip(sizes[:-1], sizes[1:])):
        if i:
            layers.append({"type": "relu"})
        layer: dict[str, Any] = {"type": "linear", "in": int(a), "out": int(b)}
        if not bias:
            layer["bias"] = False
        layers.append(layer)
    return ModelSpec(layers, (int(sizes[0]),))


def small_cnn_spec(
    input_shape: Sequence[int] = (3, 32, 32),
    channels: Sequence[int] = (32, 32, 64, 64),
    hidden: Sequence[int] = (512, 512),
    num_classes: int = 10,
) -> ModelSpec:
    """Four 3x3 convs (stride 1, pad 1), 2x2 max-pool after the 2nd and 4th, then three linear layers."""
    c, h, w = input_shape
    layers: list[dict[str, Any]] = []
    for i, out in enumerate(channels):
        layers += [{"type": "conv2d", "in_ch": c, "out_ch": out, "kernel": 3, "stride": 1, "pad": 1}, {"type": "relu"}]
        c = out
        if i % 2 == 1:
            layers.append({"type": "maxpool2d", "k": 2})
            h, w = h // 2, w // 2
    layers.append({"type": "flatten"})
    prev = c * h * w
    for n in list(hidden) + [num_classes]:
        layers.append({"type": "linear", "in": prev, "out": n})
        layers.append({"type": "relu"})
        prev = n
    layers.pop()
    return ModelSpec(layers, input_shape)
