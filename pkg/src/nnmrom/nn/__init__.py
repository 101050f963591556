"""From-scratch neural toolkit: dense layers, LSTM, Adam, gradient checks, serialization."""

from .activations import sigmoid
from .dense import DenseCache, DenseLayer, dense_backward, dense_forward
from .gradcheck import GradCheckReport, grad_check, numeric_gradient
from .lstm import BpttResult, LstmCellParams, lstm_backward, lstm_bptt, lstm_forward, lstm_step, lstm_step_backward
from .optim import AdamState, adam_update, flatten
from .serialize import dumps_params, load_params, loads_params, save_params

__all__ = [
    "AdamState", "BpttResult", "DenseCache", "DenseLayer", "GradCheckReport", "LstmCellParams",
    "adam_update", "dense_backward", "dense_forward", "dumps_params", "flatten", "grad_check",
    "load_params", "loads_params", "lstm_backward", "lstm_bptt", "lstm_forward", "lstm_step",
    "lstm_step_backward", "numeric_gradient", "save_params", "sigmoid",
]
