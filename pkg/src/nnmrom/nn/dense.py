"""Fully connected layer with hand-written backward pass."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import DimensionMismatch, InvalidParams, StaleCache
from .activations import ACTIVATIONS, activate, activation_grad


def glorot_uniform(rng: np.random.Generator, fan_out: int, fan_in: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_out, fan_in))


@dataclass(eq=False)
class DenseLayer:
    """``out = act(x @ weights.T + bias)`` with ``weights`` of shape ``[out, in]``."""

    weights: np.ndarray
    bias: np.ndarray
    activation: str = "linear"
    version: int = 0

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        if self.activation not in ACTIVATIONS:
            raise InvalidParams(f"activation must be one of {ACTIVATIONS}")
        if self.weights.ndim != 2 or self.bias.shape != (self.weights.shape[0],):
            raise DimensionMismatch("bias length must equal weight rows")

    @classmethod
    def init(cls, n_in: int, n_out: int, activation: str = "linear", rng=None) -> "DenseLayer":
        rng = np.random.default_rng(rng)
        return cls(glorot_uniform(rng, n_out, n_in), np.zeros(n_out), activation)

    @property
    def n_in(self) -> int:
        return self.weights.shape[1]

    @property
    def n_out(self) -> int:
        return self.weights.shape[0]

    def params(self) -> dict[str, np.ndarray]:
        return {"weights": self.weights, "bias": self.bias}

    def __call__(self, x):
        return dense_forward(self, x)[0]


@dataclass(frozen=True)
class DenseCache:
    inputs: np.ndarray
    outputs: np.ndarray
    version: int


def dense_forward(layer: DenseLayer, x) -> tuple[np.ndarray, DenseCache]:
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != layer.n_in:
        raise DimensionMismatch(f"input width {x.shape[-1]} != layer in-dim {layer.n_in}")
    out = activate(layer.activation, x @ layer.weights.T + layer.bias)
    return out, DenseCache(x, out, layer.version)


def dense_backward(layer: DenseLayer, cache: DenseCache, grad_out, need_input_grad: bool = True):
    """Gradients of a scalar loss w.r.t. ``weights``, ``bias`` and the layer input."""
    if cache.version != layer.version:
        raise StaleCache("layer parameters changed since the forward pass")
    dz = np.asarray(grad_out, dtype=np.float64) * activation_grad(layer.activation, cache.outputs)
    x2 = cache.inputs.reshape(-1, layer.n_in)
    dz2 = dz.reshape(-1, layer.n_out)
    grads = {"weights": dz2.T @ x2, "bias": dz2.sum(axis=0)}
    grad_in = dz @ layer.weights if need_input_grad else None
    return grads, grad_in
