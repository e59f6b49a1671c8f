"""Small tanh MLPs with hand-written reverse mode.

Weights are stored as ``(rows=out, cols=in)`` matrices so that a batch ``X``
of shape ``(B, in)`` maps to ``X @ W.T + b``.  Hidden layers use tanh, the
last layer is linear.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .rng import Rng


class ShapeError(ValueError):
    pass


@dataclass
class MlpParams:
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    activation: str = "tanh"

    def __post_init__(self):
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ShapeError("need one bias per weight matrix")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.shape != (w.shape[0],):
                raise ShapeError(f"layer {i}: weight {w.shape} vs bias {b.shape}")
            if i and w.shape[1] != self.weights[i - 1].shape[0]:
                raise ShapeError(f"layer {i} expects {w.shape[1]} inputs, "
                                 f"previous layer gives {self.weights[i - 1].shape[0]}")
        if self.activation != "tanh":
            raise ValueError(f"unsupported activation {self.activation!r}")

    @property
    def sizes(self) -> list[int]:
        return [self.weights[0].shape[1]] + [w.shape[0] for w in self.weights]

    @property
    def n_in(self) -> int:
        return self.weights[0].shape[1]

    @property
    def n_out(self) -> int:
        return self.weights[-1].shape[0]

    def arrays(self) -> list[np.ndarray]:
        """Parameter arrays in a fixed order (w0, b0, w1, b1, ...)."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def copy(self) -> "MlpParams":
        return MlpParams([w.copy() for w in self.weights], [b.copy() for b in self.biases],
                         self.activation)

    def zeros_like(self) -> "MlpParams":
        return MlpParams([np.zeros_like(w) for w in self.weights],
                         [np.zeros_like(b) for b in self.biases], self.activation)

    def to_dict(self) -> dict:
        return {
            "layers": [
                {"rows": int(w.shape[0]), "cols": int(w.shape[1]),
                 "w": w.ravel().tolist(), "b": b.tolist()}
                for w, b in zip(self.weights, self.biases)
            ],
            "activation": self.activation,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "MlpParams":
        ws, bs = [], []
        for layer in doc["layers"]:
            w = np.asarray(layer["w"], dtype=np.float64)
            if w.size != layer["rows"] * layer["cols"]:
                raise ShapeError("weight payload does not match rows*cols")
            ws.append(w.reshape(layer["rows"], layer["cols"]))
            bs.append(np.asarray(layer["b"], dtype=np.float64))
        return cls(ws, bs, doc.get("activation", "tanh"))

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "MlpParams":
        return cls.from_dict(json.loads(text))


def init_mlp(sizes: list[int], rng: Rng) -> MlpParams:
    """Glorot-uniform weights, zero biases."""
    ws, bs = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        s = math.sqrt(6.0 / (fan_in + fan_out))
        ws.append((2.0 * rng.uniform((fan_out, fan_in)) - 1.0) * s)
        bs.append(np.zeros(fan_out))
    return MlpParams(ws, bs)


def _check_input(params: MlpParams, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != params.n_in:
        raise ShapeError(f"input has {x.shape[-1]} features, network expects {params.n_in}")
    return x


def _forward_cache(params: MlpParams, x: np.ndarray):
    acts = [x]
    h = x
    last = len(params.weights) - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        h = h @ w.T + b
        if i < last:
            h = np.tanh(h)
        acts.append(h)
    return acts


def mlp_forward(params: MlpParams, x) -> np.ndarray:
    """Evaluate the network on a vector ``(in,)`` or a batch ``(B, in)``."""
    x = _check_input(params, x)
    out = _forward_cache(params, x)[-1]
    if not np.all(np.isfinite(out)):
        raise FloatingPointError("non-finite network output")
    return out


def mlp_backward(params: MlpParams, x, output_grad) -> tuple[MlpParams, np.ndarray]:
    """Gradients of ``sum(output * output_grad)``.

    Returns parameter gradients (summed over the batch) and the gradient with
    respect to ``x``, shaped like ``x``.
    """
    x = _check_input(params, x)
    g = np.asarray(output_grad, dtype=np.float64)
    squeeze = x.ndim == 1
    if squeeze:
        x, g = x[None, :], g[None, :]
    if g.shape != (x.shape[0], params.n_out):
        raise ShapeError(f"output_grad shape {g.shape} does not match output "
                         f"({x.shape[0]}, {params.n_out})")
    acts = _forward_cache(params, x)
    gw = [None] * len(params.weights)
    gb = [None] * len(params.weights)
    for i in range(len(params.weights) - 1, -1, -1):
        if i < len(params.weights) - 1:
            g = g * (1.0 - acts[i + 1] ** 2)
        gw[i] = g.T @ acts[i]
        gb[i] = g.sum(axis=0)
        g = g @ params.weights[i]
    return MlpParams(gw, gb, params.activation), (g[0] if squeeze else g)
