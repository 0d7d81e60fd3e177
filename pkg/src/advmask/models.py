"""Differentiable model contract: face embedder FR(.) and mask detector MD(.).

Both are small interpreted layer stacks (conv / leaky-rectifier / global
average pool / dense / l2-normalize) over float64 numpy arrays, with an
analytic backward pass for input gradients. They stand in for full-scale
recognizers and detectors at desk scale; adapters for real networks only
need to satisfy :class:`DifferentiableModel`.

Models are immutable after load; forward and gradient evaluation are pure.
"""

from __future__ import annotations

import abc
import json
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ShapeMismatch, UnsupportedLoss

CE_PROB_FLOOR = 1e-12


class MaskProbabilities(NamedTuple):
    not_masked: float
    masked: float

    @property
    def is_masked(self) -> bool:
        return self.masked > self.not_masked


@dataclass(frozen=True)
class EmbeddingDistanceLoss:
    """Euclidean distance between the model embedding and a reference embedding."""

    reference: np.ndarray


@dataclass(frozen=True)
class CrossEntropyLoss:
    """Cross-entropy of the detector's softmax against a {0, 1} label."""

    label: int


LossSpec = EmbeddingDistanceLoss | CrossEntropyLoss


class DifferentiableModel(abc.ABC):
    """Forward evaluation plus input-gradient evaluation on (H, W, 3) images."""

    kind: str  # "embedder" | "detector"
    input_size: tuple[int, int]

    @abc.abstractmethod
    def forward(self, image: np.ndarray) -> np.ndarray:
        """Embedding vector (embedder) or 2 logits (detector)."""

    @abc.abstractmethod
    def input_gradient(self, loss: LossSpec, image: np.ndarray) -> np.ndarray:
        """d(loss)/d(pixel), same shape as the image."""

    def loss_value(self, loss: LossSpec, image: np.ndarray) -> float:
        out = self.forward(image)
        if isinstance(loss, EmbeddingDistanceLoss):
            return float(np.linalg.norm(out - loss.reference))
        p = softmax(out)
        return float(-np.log(max(p[loss.label], CE_PROB_FLOOR)))


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max()
    e = np.exp(z)
    return e / e.sum()


class ToyModel(DifferentiableModel):
    """Interpreted layer stack defined by a :class:`ToyModelSpec`-style dict.

    Supported layers: conv (3x3-style square kernel, stride, zero padding),
    leaky_relu, global_average_pool, dense, l2_normalize. Weights live in a
    name -> float64 array dict.
    """

    def __init__(self, kind: str, input_size: tuple[int, int], layers: list[dict],
                 weights: dict[str, np.ndarray]):
        if kind not in ("embedder", "detector"):
            raise ValueError(f"unknown model kind {kind!r}")
        self.kind = kind
        self.input_size = (int(input_size[0]), int(input_size[1]))
        self.layers = layers
        self.weights = {k: np.asarray(v, dtype=np.float64) for k, v in weights.items()}

    # -- forward ---------------------------------------------------------

    def forward(self, image: np.ndarray) -> np.ndarray:
        return self.forward_trace(image)[-1][1]

    def forward_trace(self, image: np.ndarray) -> list[tuple[dict, np.ndarray]]:
        """Run the stack, recording (layer, input) pairs plus a final (None, output)."""
        self._check_shape(image)
        x = np.asarray(image, dtype=np.float64)
        trace: list[tuple[dict, np.ndarray]] = []
        for layer in self.layers:
            trace.append((layer, x))
            kind = layer["type"]
            if kind == "conv":
                x = self._conv_forward(layer, x)
            elif kind == "leaky_relu":
                slope = layer["slope"]
                x = np.where(x > 0, x, slope * x)
            elif kind == "global_average_pool":
                x = x.mean(axis=(0, 1))
            elif kind == "dense":
                w = self.weights[layer["name"] + ".weight"]
                b = self.weights[layer["name"] + ".bias"]
                x = w @ x + b
            elif kind == "l2_normalize":
                n = np.linalg.norm(x)
                x = x / n if n > 0 else np.zeros_like(x)
            else:
                raise ValueError(f"unknown layer type {kind!r}")
        trace.append(({"type": "output"}, x))
        return trace

    def preactivations(self, image: np.ndarray) -> list[np.ndarray]:
        """Inputs to each leaky_relu layer (for kink-proximity checks in tests)."""
        return [x for layer, x in self.forward_trace(image) if layer["type"] == "leaky_relu"]

    # -- backward --------------------------------------------------------

    def input_gradient(self, loss: LossSpec, image: np.ndarray) -> np.ndarray:
        trace = self.forward_trace(image)
        out = trace[-1][1]
        grad = self._loss_output_gradient(loss, out)
        for layer, x in reversed(trace[:-1]):
            kind = layer["type"]
            if kind == "conv":
                grad = self._conv_backward(layer, x, grad)
            elif kind == "leaky_relu":
                slope = layer["slope"]
                grad = grad * np.where(x > 0, 1.0, slope)
            elif kind == "global_average_pool":
                h, w = x.shape[:2]
                grad = np.broadcast_to(grad / (h * w), x.shape).copy()
            elif kind == "dense":
                w = self.weights[layer["name"] + ".weight"]
                grad = w.T @ grad
            elif kind == "l2_normalize":
                n = np.linalg.norm(x)
                if n > 0:
                    y = x / n
                    grad = (grad - y * np.dot(y, grad)) / n
                else:
                    grad = np.zeros_like(x)
        return grad

    def _loss_output_gradient(self, loss: LossSpec, out: np.ndarray) -> np.ndarray:
        if isinstance(loss, EmbeddingDistanceLoss):
            if self.kind != "embedder":
                raise UnsupportedLoss("embedding-distance loss needs an embedder")
            diff = out - loss.reference
            d = np.linalg.norm(diff)
            return diff / d if d > 0 else np.zeros_like(diff)
        if isinstance(loss, CrossEntropyLoss):
            if self.kind != "detector":
                raise UnsupportedLoss("cross-entropy loss needs a detector")
            if loss.label not in (0, 1):
                raise UnsupportedLoss(f"label must be 0 or 1, got {loss.label}")
            p = softmax(out)
            if p[loss.label] <= CE_PROB_FLOOR:
                return np.zeros_like(p)  # loss saturated at the probability floor
            onehot = np.zeros_like(p)
            onehot[loss.label] = 1.0
            return p - onehot
        raise UnsupportedLoss(f"unknown loss spec {type(loss).__name__}")

    # -- conv ------------------------------------------------------------

    def _conv_forward(self, layer: dict, x: np.ndarray) -> np.ndarray:
        w = self.weights[layer["name"] + ".weight"]  # (Cout, Cin, k, k)
        b = self.weights[layer["name"] + ".bias"]
        stride, pad = layer["stride"], layer["padding"]
        k = w.shape[2]
        xp = np.pad(x, ((pad, pad), (pad, pad), (0, 0)))
        win = sliding_window_view(xp, (k, k), axis=(0, 1))[::stride, ::stride]
        # win: (Hout, Wout, Cin, k, k)
        return np.tensordot(win, w, axes=([2, 3, 4], [1, 2, 3])) + b

    def _conv_backward(self, layer: dict, x: np.ndarray, dy: np.ndarray) -> np.ndarray:
        w = self.weights[layer["name"] + ".weight"]
        stride, pad = layer["stride"], layer["padding"]
        k = w.shape[2]
        h, w_in = x.shape[:2]
        hout, wout = dy.shape[:2]
        dwin = np.einsum("hwo,oikl->hwikl", dy, w)
        dxp = np.zeros((h + 2 * pad, w_in + 2 * pad, x.shape[2]))
        for i in range(k):
            for j in range(k):
                dxp[i:i + hout * stride:stride, j:j + wout * stride:stride] += dwin[:, :, :, i, j]
        return dxp[pad:pad + h, pad:pad + w_in]

    # -- plumbing --------------------------------------------------------

    def _check_shape(self, image: np.ndarray) -> None:
        expect = (self.input_size[0], self.input_size[1], 3)
        if image.shape != expect:
            raise ShapeMismatch(f"model expects {expect}, got {image.shape}")

    @property
    def output_dim(self) -> int:
        for layer in reversed(self.layers):
            if layer["type"] == "dense":
                return self.weights[layer["name"] + ".weight"].shape[0]
        raise ValueError("model has no dense layer")


# -- spec-level operations -------------------------------------------------

def embed(model: DifferentiableModel, image: np.ndarray) -> np.ndarray:
    """Embedding vector of the image under the face recognizer."""
    if model.kind != "embedder":
        raise UnsupportedLoss(f"embed() needs an embedder, got {model.kind!r}")
    return model.forward(image)


def detect_mask(model: DifferentiableModel, image: np.ndarray) -> MaskProbabilities:
    """(p_not_masked, p_masked) from the detector's two softmaxed logits."""
    if model.kind != "detector":
        raise UnsupportedLoss(f"detect_mask() needs a detector, got {model.kind!r}")
    p = softmax(model.forward(image))
    return MaskProbabilities(float(p[0]), float(p[1]))


def input_gradient(model: DifferentiableModel, loss: LossSpec, image: np.ndarray) -> np.ndarray:
    return model.input_gradient(loss, image)


def finite_difference_gradient(
    model: DifferentiableModel,
    loss: LossSpec,
    image: np.ndarray,
    step: float,
    coords: list[tuple[int, int, int]] | None = None,
) -> np.ndarray:
    """Central-difference input gradient; the test oracle for the analytic pass.

    With ``coords`` given, only those (row, col, channel) entries are filled
    (others are 0); otherwise every coordinate is probed, which is only
    sensible for tiny images.
    """
    if step <= 0:
        raise ValueError("finite-difference step must be > 0")
    image = np.asarray(image, dtype=np.float64)
    grad = np.zeros_like(image)
    if coords is None:
        coords = [(r, c, ch) for r in range(image.shape[0])
                  for c in range(image.shape[1]) for ch in range(3)]
    for r, c, ch in coords:
        bump = np.zeros_like(image)
        bump[r, c, ch] = step
        hi = model.loss_value(loss, image + bump)
        lo = model.loss_value(loss, image - bump)
        grad[r, c, ch] = (hi - lo) / (2.0 * step)
    return grad


def embedding_distance(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.linalg.norm(np.asarray(a) - np.asarray(b)))


# -- serialization ----------------------------------------------------------

def save_model(model: ToyModel, path) -> None:
    obj = {
        "kind": model.kind,
        "input_size": list(model.input_size),
        "layers": model.layers,
        "weights": {
            name: {"shape": list(arr.shape), "data": arr.ravel().tolist()}
            for name, arr in sorted(model.weights.items())
        },
    }
    Path(path).write_text(json.dumps(obj, sort_keys=True, separators=(",", ": "), indent=1) + "\n")


def load_model(path) -> ToyModel:
    obj = json.loads(Path(path).read_text())
    weights = {
        name: np.asarray(spec["data"], dtype=np.float64).reshape(spec["shape"])
        for name, spec in obj["weights"].items()
    }
    return ToyModel(obj["kind"], tuple(obj["input_size"]), obj["layers"], weights)
