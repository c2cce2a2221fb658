"""Differentiable operations.

Supported op kinds: matmul, conv2d, add, mul, relu, sigmoid, tanh,
mean_pool2d, flatten, concat, slice, log_softmax, softmax, sum, mean,
scalar_mul. Shapes are validated strictly; the only implicit broadcast is
scalar-with-tensor in ``add``/``mul``. ``matmul`` and ``conv2d`` accept an
optional bias input (row bias / per-channel bias) so layers never need a
broadcasting add.
"""

from __future__ import annotations

import math
from typing import Optional, Sequence

import numpy as np

from ..errors import ShapeError
from . import kernels
from .core import Tensor

F32 = np.float32
F64 = np.float64


def _shape_err(op: str, msg: str) -> ShapeError:
    return ShapeError(f"{op}: {msg}")


def _as_f32(x: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(x, dtype=F32)


# --------------------------------------------------------------------------
# elementwise / arithmetic


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape and a.size != 1 and b.size != 1:
        raise _shape_err("add", f"incompatible shapes {a.shape} and {b.shape}")
    out = (a.data + b.data).astype(F32)

    def rule(g):
        ga = g if a.shape == out.shape else np.sum(g, dtype=F64).astype(F32).reshape(a.shape)
        gb = g if b.shape == out.shape else np.sum(g, dtype=F64).astype(F32).reshape(b.shape)
        return ga, gb

    return Tensor._from_op("add", out, (a, b), rule)


def mul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape and a.size != 1 and b.size != 1:
        raise _shape_err("mul", f"incompatible shapes {a.shape} and {b.shape}")
    out = (a.data * b.data).astype(F32)

    def rule(g):
        ga = g * b.data
        gb = g * a.data
        if a.shape != out.shape:
            ga = np.sum(ga, dtype=F64).astype(F32).reshape(a.shape)
        if b.shape != out.shape:
            gb = np.sum(gb, dtype=F64).astype(F32).reshape(b.shape)
        return ga, gb

    return Tensor._from_op("mul", out, (a, b), rule)


def scalar_mul(x: Tensor, c: float) -> Tensor:
    c = float(c)
    if not math.isfinite(c):
        raise _shape_err("scalar_mul", f"non-finite constant {c!r}")
    cf = F32(c)
    out = x.data * cf

    def rule(g):
        return (g * cf,)

    return Tensor._from_op("scalar_mul", out, (x,), rule)


def relu(x: Tensor) -> Tensor:
    out = np.maximum(x.data, F32(0))

    def rule(g):
        return (g * (x.data > 0),)

    return Tensor._from_op("relu", out, (x,), rule)


def sigmoid(x: Tensor) -> Tensor:
    out = (1.0 / (1.0 + np.exp(-x.data.astype(F64)))).astype(F32)

    def rule(g):
        return (g * out * (1 - out),)

    return Tensor._from_op("sigmoid", out, (x,), rule)


def tanh(x: Tensor) -> Tensor:
    out = np.tanh(x.data.astype(F64)).astype(F32)

    def rule(g):
        return (g * (1 - out * out),)

    return Tensor._from_op("tanh", out, (x,), rule)


# --------------------------------------------------------------------------
# linear algebra


def matmul(a: Tensor, b: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise _shape_err("matmul", f"expects 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise _shape_err("matmul", f"inner dims differ: {a.shape} @ {b.shape}")
    out = kernels.matmul(_as_f32(a.data), _as_f32(b.data))
    if bias is not None:
        if bias.shape != (b.shape[1],):
            raise _shape_err("matmul", f"bias shape {bias.shape} != ({b.shape[1]},)")
        out = out + bias.data

    def rule(g):
        ga = kernels.matmul(_as_f32(g), _as_f32(b.data.T))
        gb = kernels.matmul(_as_f32(a.data.T), _as_f32(g))
        if bias is None:
            return ga, gb
        gbias = np.sum(g, axis=0, dtype=F64).astype(F32)
        return ga, gb, gbias

    inputs = (a, b) if bias is None else (a, b, bias)
    return Tensor._from_op("matmul", out, inputs, rule)


def _same_pad(extent: int, k: int, stride: int) -> tuple[int, int]:
    out = -(-extent // stride)
    total = max((out - 1) * stride + k - extent, 0)
    return total // 2, total - total // 2


def conv2d(x: Tensor, w: Tensor, bias: Optional[Tensor] = None,
           stride: int = 1, padding: str = "same") -> Tensor:
    if x.data.ndim != 4 or w.data.ndim != 4:
        raise _shape_err("conv2d", f"expects NCHW input and OCKK weight, got {x.shape}, {w.shape}")
    n, c, h, wd = x.shape
    o, cw, kh, kw = w.shape
    if cw != c:
        raise _shape_err("conv2d", f"input channels {c} != weight channels {cw}")
    if kh != kw or kh not in (3, 5):
        raise _shape_err("conv2d", f"kernel must be square 3 or 5, got {kh}x{kw}")
    if stride not in (1, 2):
        raise _shape_err("conv2d", f"stride must be 1 or 2, got {stride}")
    if padding not in ("same", "valid"):
        raise _shape_err("conv2d", f"padding must be 'same' or 'valid', got {padding!r}")
    if padding == "same":
        pt, pb = _same_pad(h, kh, stride)
        pl, pr = _same_pad(wd, kw, stride)
    else:
        pt = pb = pl = pr = 0
        if h < kh or wd < kw:
            raise _shape_err("conv2d", f"valid padding needs input >= kernel, got {x.shape}")
    out = kernels.conv2d_fwd(_as_f32(x.data), _as_f32(w.data), stride, pt, pb, pl, pr)
    if bias is not None:
        if bias.shape != (o,):
            raise _shape_err("conv2d", f"bias shape {bias.shape} != ({o},)")
        out = out + bias.data[None, :, None, None]

    def rule(g):
        g32 = _as_f32(g)
        gx = kernels.conv2d_bwd_input(g32, _as_f32(w.data), stride, pt, pb, pl, pr, h, wd)
        gw = kernels.conv2d_bwd_weight(g32, _as_f32(x.data), stride, pt, pb, pl, pr, kh, kw)
        if bias is None:
            return gx, gw
        gbias = np.sum(g, axis=(0, 2, 3), dtype=F64).astype(F32)
        return gx, gw, gbias

    inputs = (x, w) if bias is None else (x, w, bias)
    return Tensor._from_op("conv2d", out, inputs, rule)


# --------------------------------------------------------------------------
# shape ops


def mean_pool2d(x: Tensor, kh: int, kw: int) -> Tensor:
    if x.data.ndim != 4:
        raise _shape_err("mean_pool2d", f"expects NCHW input, got {x.shape}")
    n, c, h, w = x.shape
    if h % kh or w % kw:
        raise _shape_err("mean_pool2d", f"window {kh}x{kw} must divide spatial dims of {x.shape}")
    ho, wo = h // kh, w // kw
    blocks = x.data.reshape(n, c, ho, kh, wo, kw)
    out = (np.sum(blocks, axis=(3, 5), dtype=F64) / (kh * kw)).astype(F32)

    def rule(g):
        gx = np.broadcast_to(g[:, :, :, None, :, None] / F32(kh * kw),
                             (n, c, ho, kh, wo, kw))
        return (gx.reshape(n, c, h, w).astype(F32),)

    return Tensor._from_op("mean_pool2d", out, (x,), rule)


def flatten(x: Tensor) -> Tensor:
    if x.data.ndim < 2:
        raise _shape_err("flatten", f"expects rank >= 2, got {x.shape}")
    shape = x.shape
    out = x.data.reshape(shape[0], -1)

    def rule(g):
        return (g.reshape(shape),)

    return Tensor._from_op("flatten", out, (x,), rule)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    if not tensors:
        raise _shape_err("concat", "needs at least one input")
    nd = tensors[0].data.ndim
    ax = axis if axis >= 0 else axis + nd
    if not 0 <= ax < nd:
        raise _shape_err("concat", f"axis {axis} out of range for rank {nd}")
    base = list(tensors[0].shape)
    for t in tensors[1:]:
        other = list(t.shape)
        if len(other) != nd or other[:ax] + other[ax + 1:] != base[:ax] + base[ax + 1:]:
            raise _shape_err("concat", f"incompatible shapes {tensors[0].shape} and {t.shape}")
    out = np.concatenate([t.data for t in tensors], axis=ax)
    sizes = [t.shape[ax] for t in tensors]

    def rule(g):
        splits = np.split(g, np.cumsum(sizes)[:-1], axis=ax)
        return tuple(np.ascontiguousarray(s) for s in splits)

    return Tensor._from_op("concat", out, tuple(tensors), rule)


def slice_(x: Tensor, axis: int, start: int, stop: int) -> Tensor:
    nd = x.data.ndim
    ax = axis if axis >= 0 else axis + nd
    if not 0 <= ax < nd:
        raise _shape_err("slice", f"axis {axis} out of range for rank {nd}")
    if not 0 <= start < stop <= x.shape[ax]:
        raise _shape_err("slice", f"range [{start}:{stop}) invalid for extent {x.shape[ax]}")
    sl = tuple(slice(start, stop) if d == ax else slice(None) for d in range(nd))
    out = np.ascontiguousarray(x.data[sl])

    def rule(g):
        gx = np.zeros_like(x.data)
        gx[sl] = g
        return (gx,)

    return Tensor._from_op("slice", out, (x,), rule)


# --------------------------------------------------------------------------
# reductions and normalizers


def sum(x: Tensor, axis: Optional[int] = None) -> Tensor:  # noqa: A001 - op kind name
    if axis is None:
        out = np.asarray(np.sum(x.data, dtype=F64), dtype=F32)

        def rule(g):
            return (np.full(x.shape, g.reshape(()), dtype=F32),)
    else:
        ax = axis if axis >= 0 else axis + x.data.ndim
        if not 0 <= ax < x.data.ndim:
            raise _shape_err("sum", f"axis {axis} out of range for rank {x.data.ndim}")
        out = np.sum(x.data, axis=ax, dtype=F64).astype(F32)

        def rule(g):
            return (np.broadcast_to(np.expand_dims(g, ax), x.shape).astype(F32),)

    return Tensor._from_op("sum", out, (x,), rule)


def mean(x: Tensor, axis: Optional[int] = None) -> Tensor:
    if axis is None:
        n = x.data.size
        out = np.asarray(np.sum(x.data, dtype=F64) / n, dtype=F32)

        def rule(g):
            return (np.full(x.shape, g.reshape(()) / F32(n), dtype=F32),)
    else:
        ax = axis if axis >= 0 else axis + x.data.ndim
        if not 0 <= ax < x.data.ndim:
            raise _shape_err("mean", f"axis {axis} out of range for rank {x.data.ndim}")
        n = x.shape[ax]
        out = (np.sum(x.data, axis=ax, dtype=F64) / n).astype(F32)

        def rule(g):
            return (np.broadcast_to(np.expand_dims(g / F32(n), ax), x.shape).astype(F32),)

    return Tensor._from_op("mean", out, (x,), rule)


def _softmax64(data: np.ndarray, ax: int) -> np.ndarray:
    z = data.astype(F64)
    z = z - np.max(z, axis=ax, keepdims=True)
    e = np.exp(z)
    return e / np.sum(e, axis=ax, keepdims=True)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    ax = axis if axis >= 0 else axis + x.data.ndim
    if not 0 <= ax < x.data.ndim:
        raise _shape_err("softmax", f"axis {axis} out of range for rank {x.data.ndim}")
    out = _softmax64(x.data, ax).astype(F32)

    def rule(g):
        dot = np.sum(g * out, axis=ax, keepdims=True, dtype=F64).astype(F32)
        return (out * (g - dot),)

    return Tensor._from_op("softmax", out, (x,), rule)


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    ax = axis if axis >= 0 else axis + x.data.ndim
    if not 0 <= ax < x.data.ndim:
        raise _shape_err("log_softmax", f"axis {axis} out of range for rank {x.data.ndim}")
    z = x.data.astype(F64)
    z = z - np.max(z, axis=ax, keepdims=True)
    lse = np.log(np.sum(np.exp(z), axis=ax, keepdims=True))
    out = (z - lse).astype(F32)
    soft = np.exp(z - lse).astype(F32)

    def rule(g):
        gsum = np.sum(g, axis=ax, keepdims=True, dtype=F64).astype(F32)
        return (g - soft * gsum,)

    return Tensor._from_op("log_softmax", out, (x,), rule)


# --------------------------------------------------------------------------
# dispatcher

OPS = {
    "matmul": matmul,
    "conv2d": conv2d,
    "add": add,
    "mul": mul,
    "relu": relu,
    "sigmoid": sigmoid,
    "tanh": tanh,
    "mean_pool2d": mean_pool2d,
    "flatten": flatten,
    "concat": concat,
    "slice": slice_,
    "log_softmax": log_softmax,
    "softmax": softmax,
    "sum": sum,
    "mean": mean,
    "scalar_mul": scalar_mul,
}


def forward_op(kind: str, inputs, attrs: Optional[dict] = None) -> Tensor:
    """Apply one op by kind name; rejects unknown kinds."""
    fn = OPS.get(kind)
    if fn is None:
        raise ValueError(f"unknown op kind {kind!r}; expected one of {sorted(OPS)}")
    attrs = dict(attrs or {})
    if kind == "concat":
        return fn(inputs, **attrs)
    return fn(*inputs, **attrs)
