import numpy as np

from ..errors import InvalidParams

ACTIVATIONS = ("linear", "tanh")


def sigmoid(x):
    """Logistic function evaluated in split form so neither branch overflows."""
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def activate(name, z):
    if name == "linear":
        return z
    if name == "tanh":
        return np.tanh(z)
    raise InvalidParams(f"unknown activation {name!r}")


def activation_grad(name, out):
    """Derivative of the activation expressed through its output."""
    if name == "linear":
        return 1.0
    if name == "tanh":
        return 1.0 - out * out
    raise InvalidParams(f"unknown activation {name!r}")
