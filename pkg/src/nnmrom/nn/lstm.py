"""LSTM cell, sequence unrolling and backpropagation through time.

Gate pre-activations are ``z = x @ Wx.T + h @ Wh.T + b`` with the four gate blocks stacked
in the order input, forget, output, candidate. Arrays are time-major: ``[T, batch, width]``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import DimensionMismatch, StaleCache
from .activations import sigmoid
from .dense import DenseLayer, dense_backward, dense_forward, glorot_uniform

GATES = ("i", "f", "o", "g")


@dataclass(eq=False)
class LstmCellParams:
    weights: np.ndarray  # [4H, I + H]
    bias: np.ndarray  # [4H]
    version: int = 0

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        rows = self.weights.shape[0]
        if self.weights.ndim != 2 or rows % 4 or self.bias.shape != (rows,) or self.weights.shape[1] <= rows // 4:
            raise DimensionMismatch("inconsistent LSTM gate dimensions")

    @classmethod
    def init(cls, n_input: int, n_hidden: int, rng=None, forget_bias: float = 1.0) -> "LstmCellParams":
        rng = np.random.default_rng(rng)
        blocks = [np.hstack([glorot_uniform(rng, n_hidden, n_input), glorot_uniform(rng, n_hidden, n_hidden)])
                  for _ in GATES]
        bias = np.zeros(4 * n_hidden)
        bias[n_hidden:2 * n_hidden] = forget_bias
        return cls(np.vstack(blocks), bias)

    @property
    def n_hidden(self) -> int:
        return self.weights.shape[0] // 4

    @property
    def n_input(self) -> int:
        return self.weights.shape[1] - self.n_hidden

    @property
    def w_input(self) -> np.ndarray:
        return self.weights[:, :self.n_input]

    @property
    def w_hidden(self) -> np.ndarray:
        return self.weights[:, self.n_input:]

    def gate_weights(self, gate: str) -> np.ndarray:
        k = GATES.index(gate)
        return self.weights[k * self.n_hidden:(k + 1) * self.n_hidden]

    def gate_bias(self, gate: str) -> np.ndarray:
        k = GATES.index(gate)
        return self.bias[k * self.n_hidden:(k + 1) * self.n_hidden]

    def params(self) -> dict[str, np.ndarray]:
        return {"weights": self.weights, "bias": self.bias}


def _gates(z, n_hidden):
    act = np.empty_like(z)
    act[..., :3 * n_hidden] = sigmoid(z[..., :3 * n_hidden])
    act[..., 3 * n_hidden:] = np.tanh(z[..., 3 * n_hidden:])
    return act


@dataclass(frozen=True)
class LstmStepCache:
    x: np.ndarray
    h: np.ndarray
    c: np.ndarray
    gates: np.ndarray
    tanh_c: np.ndarray
    version: int


def lstm_step(params: LstmCellParams, x, h, c):
    """Advance one time step; returns ``(h_next, c_next, cache)``."""
    x, h, c = (np.asarray(a, dtype=np.float64) for a in (x, h, c))
    H = params.n_hidden
    if x.shape[-1] != params.n_input or h.shape[-1] != H or c.shape != h.shape:
        raise DimensionMismatch("LSTM step dimensions do not match the cell")
    z = x @ params.w_input.T + h @ params.w_hidden.T + params.bias
    a = _gates(z, H)
    c_next = a[..., H:2 * H] * c + a[..., :H] * a[..., 3 * H:]
    tanh_c = np.tanh(c_next)
    h_next = a[..., 2 * H:3 * H] * tanh_c
    return h_next, c_next, LstmStepCache(x, h, c, a, tanh_c, params.version)


def _gate_delta(a, tanh_c, c_prev, dh, dc, H):
    """Pre-activation gradient for one step plus the gradient flowing into ``c_prev``."""
    i, f, o, g = a[..., :H], a[..., H:2 * H], a[..., 2 * H:3 * H], a[..., 3 * H:]
    dc_total = dc + dh * o * (1.0 - tanh_c * tanh_c)
    dz = np.empty_like(a)
    dz[..., :H] = dc_total * g * i * (1.0 - i)
    dz[..., H:2 * H] = dc_total * c_prev * f * (1.0 - f)
    dz[..., 2 * H:3 * H] = dh * tanh_c * o * (1.0 - o)
    dz[..., 3 * H:] = dc_total * i * (1.0 - g * g)
    return dz, dc_total * f


def lstm_step_backward(params: LstmCellParams, cache: LstmStepCache, dh, dc):
    """Returns ``(grads, dx, dh_prev, dc_prev)`` for one step."""
    if cache.version != params.version:
        raise StaleCache("LSTM parameters changed since the forward pass")
    dz, dc_prev = _gate_delta(cache.gates, cache.tanh_c, cache.c, dh, dc, params.n_hidden)
    xh = np.concatenate([cache.x, cache.h], axis=-1).reshape(-1, params.weights.shape[1])
    dz2 = dz.reshape(-1, dz.shape[-1])
    grads = {"weights": dz2.T @ xh, "bias": dz2.sum(axis=0)}
    return grads, dz @ params.w_input, dz @ params.w_hidden, dc_prev


@dataclass(frozen=True)
class LstmSeqCache:
    xs: np.ndarray
    hs: np.ndarray  # [T + 1, B, H], hs[0] = h0
    cs: np.ndarray
    gates: np.ndarray
    tanh_c: np.ndarray
    version: int


def _as_batched(xs):
    xs = np.asarray(xs, dtype=np.float64)
    if xs.ndim == 2:
        xs = xs[:, None, :]
    if xs.ndim != 3:
        raise DimensionMismatch("sequence input must be [T, I] or [T, B, I]")
    return xs


def lstm_forward(params: LstmCellParams, xs, h0=None, c0=None):
    """Unroll over ``xs[T, B, I]``; returns ``(hs[T, B, H], cache)``."""
    xs = _as_batched(xs)
    T, B, _ = xs.shape
    H = params.n_hidden
    if xs.shape[-1] != params.n_input:
        raise DimensionMismatch(f"input width {xs.shape[-1]} != cell input {params.n_input}")
    hs = np.zeros((T + 1, B, H))
    cs = np.zeros((T + 1, B, H))
    if h0 is not None:
        hs[0] = h0
    if c0 is not None:
        cs[0] = c0
    zx = xs @ params.w_input.T + params.bias
    wh_t = params.w_hidden.T
    gates = np.empty((T, B, 4 * H))
    tanh_c = np.empty((T, B, H))
    for t in range(T):
        a = _gates(zx[t] + hs[t] @ wh_t, H)
        gates[t] = a
        cs[t + 1] = a[:, H:2 * H] * cs[t] + a[:, :H] * a[:, 3 * H:]
        tanh_c[t] = np.tanh(cs[t + 1])
        hs[t + 1] = a[:, 2 * H:3 * H] * tanh_c[t]
    return hs[1:], LstmSeqCache(xs, hs, cs, gates, tanh_c, params.version)


def lstm_backward(params: LstmCellParams, cache: LstmSeqCache, dhs, dh_last=None, dc_last=None,
                  need_input_grad: bool = False):
    """BPTT over a cached unroll. Returns ``(grads, dxs, dh0, dc0)``; ``dxs`` is None unless requested."""
    if cache.version != params.version:
        raise StaleCache("LSTM parameters changed since the forward pass")
    T, B, _ = cache.xs.shape
    H = params.n_hidden
    dhs = np.asarray(dhs, dtype=np.float64).reshape(T, B, H)
    dz = np.empty((T, B, 4 * H))
    dh = np.zeros((B, H)) if dh_last is None else np.array(dh_last, dtype=np.float64)
    dc = np.zeros((B, H)) if dc_last is None else np.array(dc_last, dtype=np.float64)
    w_hidden = params.w_hidden
    for t in range(T - 1, -1, -1):
        dz[t], dc = _gate_delta(cache.gates[t], cache.tanh_c[t], cache.cs[t], dh + dhs[t], dc, H)
        dh = dz[t] @ w_hidden
    dz2 = dz.reshape(T * B, 4 * H)
    dwx = dz2.T @ cache.xs.reshape(T * B, -1)
    dwh = dz2.T @ cache.hs[:-1].reshape(T * B, H)
    grads = {"weights": np.hstack([dwx, dwh]), "bias": dz2.sum(axis=0)}
    dxs = dz @ params.w_input if need_input_grad else None
    return grads, dxs, dh, dc


@dataclass(frozen=True)
class BpttResult:
    loss: float
    grads: dict
    predictions: np.ndarray
    h_last: np.ndarray
    c_last: np.ndarray


def lstm_bptt(params: LstmCellParams, xs, h0, c0, targets, readout: DenseLayer) -> BpttResult:
    """MSE of ``readout(lstm(xs))`` against ``targets`` with exact gradients over the window.

    ``grads`` holds ``{"lstm": {...}, "readout": {...}}``.
    """
    xs = _as_batched(xs)
    targets = np.asarray(targets, dtype=np.float64)
    if targets.ndim == 2:
        targets = targets[:, None, :]
    if targets.shape != (xs.shape[0], xs.shape[1], readout.n_out):
        raise DimensionMismatch(f"targets shape {targets.shape} does not match the unrolled output")
    hs, cache = lstm_forward(params, xs, h0, c0)
    preds, rcache = dense_forward(readout, hs)
    err = preds - targets
    loss = float(np.mean(err * err))
    rgrads, dhs = dense_backward(readout, rcache, 2.0 * err / err.size)
    lgrads, _, _, _ = lstm_backward(params, cache, dhs)
    return BpttResult(loss, {"lstm": lgrads, "readout": rgrads}, preds, hs[-1], cache.cs[-1])
