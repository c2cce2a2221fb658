"""Gated recurrent cell used by the learning-rate controller."""

from __future__ import annotations

import numpy as np

from ..errors import ShapeError
from . import ops
from .core import Tensor


def init_lstm_weights(input_dim: int, hidden: int, rng: np.random.Generator,
                      prefix: str = "lstm") -> dict[str, Tensor]:
    """Uniform(-k, k) init with k = 1/sqrt(hidden), gates packed as [i,f,g,o]."""
    k = 1.0 / np.sqrt(hidden)
    def u(shape):
        return rng.uniform(-k, k, size=shape).astype(np.float32)
    return {
        "wx": Tensor(u((input_dim, 4 * hidden)), requires_grad=True, name=f"{prefix}.wx"),
        "wh": Tensor(u((hidden, 4 * hidden)), requires_grad=True, name=f"{prefix}.wh"),
        "b": Tensor(np.zeros(4 * hidden, dtype=np.float32), requires_grad=True,
                    name=f"{prefix}.b"),
    }


def lstm_cell(x: Tensor, h_prev: Tensor, c_prev: Tensor,
              weights: dict[str, Tensor]) -> tuple[Tensor, Tensor]:
    """One step of a standard LSTM; differentiable through both outputs."""
    wx, wh, b = weights["wx"], weights["wh"], weights["b"]
    hidden = wh.shape[0]
    if wx.shape[1] != 4 * hidden or wh.shape[1] != 4 * hidden or b.shape != (4 * hidden,):
        raise ShapeError(f"lstm_cell: inconsistent weight shapes "
                         f"wx={wx.shape} wh={wh.shape} b={b.shape}")
    if x.shape[0] != h_prev.shape[0] or x.shape[0] != c_prev.shape[0]:
        raise ShapeError(f"lstm_cell: batch extents differ: x={x.shape} "
                         f"h={h_prev.shape} c={c_prev.shape}")
    if h_prev.shape[1] != hidden or c_prev.shape[1] != hidden:
        raise ShapeError(f"lstm_cell: state size {h_prev.shape[1]} != hidden {hidden}")
    if x.shape[1] != wx.shape[0]:
        raise ShapeError(f"lstm_cell: input dim {x.shape[1]} != wx rows {wx.shape[0]}")

    z = ops.add(ops.matmul(x, wx), ops.matmul(h_prev, wh, bias=b))
    i = ops.sigmoid(ops.slice_(z, 1, 0, hidden))
    f = ops.sigmoid(ops.slice_(z, 1, hidden, 2 * hidden))
    g = ops.tanh(ops.slice_(z, 1, 2 * hidden, 3 * hidden))
    o = ops.sigmoid(ops.slice_(z, 1, 3 * hidden, 4 * hidden))
    c = ops.add(ops.mul(f, c_prev), ops.mul(i, g))
    h = ops.mul(o, ops.tanh(c))
    return h, c
