"""Minimal float32 tensor library with reverse-mode autodiff."""

from . import kernels, ops
from .core import Tensor, backward, grad_enabled, no_grad
from .lstm import init_lstm_weights, lstm_cell
from .ops import forward_op

__all__ = [
    "Tensor", "backward", "no_grad", "grad_enabled", "ops", "kernels",
    "forward_op", "lstm_cell", "init_lstm_weights",
]
