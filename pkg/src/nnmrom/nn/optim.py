"""Adam optimizer over flat ``{name: array}`` parameter maps (updated in place)."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import ShapeMismatch


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_update(state: AdamState, params: dict, grads: dict) -> dict:
    """One bias-corrected Adam step. Mutates ``params`` arrays and ``state``; returns ``params``."""
    if set(params) != set(grads):
        raise ShapeMismatch(f"parameter/gradient keys differ: {sorted(set(params) ^ set(grads))}")
    for name, p in params.items():
        if p.shape != np.shape(grads[name]):
            raise ShapeMismatch(f"{name}: parameter {p.shape} vs gradient {np.shape(grads[name])}")
        if name in state.m and state.m[name].shape != p.shape:
            raise ShapeMismatch(f"{name}: accumulator shape {state.m[name].shape} vs {p.shape}")
    state.step += 1
    t = state.step
    c1 = 1.0 - state.beta1 ** t
    c2 = 1.0 - state.beta2 ** t
    for name, p in params.items():
        g = np.asarray(grads[name], dtype=np.float64)
        m = state.m.setdefault(name, np.zeros_like(p))
        v = state.v.setdefault(name, np.zeros_like(p))
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        p -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params


def flatten(tree: dict, prefix: str = "") -> dict:
    """Flatten nested dicts of arrays into ``{"a.b": array}``."""
    out = {}
    for key, value in tree.items():
        name = f"{prefix}{key}"
        if isinstance(value, dict):
            out.update(flatten(value, name + "."))
        else:
            out[name] = value
    return out
