"""Self-contained invariant suites.

Each ``check_*`` function raises ``VerificationFailure`` on violation and
returns quietly otherwise. The CLI ``verify`` subcommand runs the registry
at the bottom; the test suite calls the same functions.
"""

from __future__ import annotations

import zlib

import numpy as np

from .errors import GraphError, Syn2RealError
from .tensor import Tensor, backward, lstm_cell, init_lstm_weights, ops

F32 = np.float32


class VerificationFailure(Syn2RealError):
    pass


def _require(cond: bool, msg: str) -> None:
    if not cond:
        raise VerificationFailure(msg)


# --------------------------------------------------------------------------
# finite-difference gradient oracle

FD_H = 1e-3
FD_TOL = 1e-3


def finite_diff_grads(make_out, leaves: list[Tensor], weights: np.ndarray,
                      h: float = FD_H) -> list[np.ndarray]:
    """Central differences of sum(weights * make_out()) w.r.t. each leaf.

    The weighted reduction happens in float64 on the test side, so only the
    op under test contributes float32 rounding. The divisor is the actually
    applied float32 perturbation, not the nominal 2h.
    """
    w64 = weights.astype(np.float64)

    def loss_value() -> float:
        return float(np.sum(make_out().data.astype(np.float64) * w64))

    grads = []
    for leaf in leaves:
        flat = leaf.data.reshape(-1)
        g = np.zeros(flat.size, dtype=np.float64)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = F32(orig + h)
            hi_x, hi = float(flat[i]), loss_value()
            flat[i] = F32(orig - h)
            lo_x, lo = float(flat[i]), loss_value()
            flat[i] = orig
            g[i] = (hi - lo) / (hi_x - lo_x)
        grads.append(g.reshape(leaf.data.shape))
    return grads


def analytic_grads(make_out, leaves: list[Tensor], weights: np.ndarray) -> list[np.ndarray]:
    """Gradients of sum(weights * make_out()) from the backward pass."""
    for leaf in leaves:
        leaf.zero_grad()
    out = make_out()
    loss = ops.sum(ops.mul(out, Tensor(weights)))
    backward(loss)
    result = []
    for leaf in leaves:
        _require(leaf.grad is not None, f"no grad on leaf {leaf.name or leaf.shape}")
        result.append(leaf.grad.astype(np.float64))
        leaf.zero_grad()
    return result


def max_rel_error(a: np.ndarray, b: np.ndarray) -> float:
    scale = max(float(np.max(np.abs(a), initial=0.0)),
                float(np.max(np.abs(b), initial=0.0)), 1e-6)
    return float(np.max(np.abs(a - b), initial=0.0)) / scale


def gradcheck(make_out, leaves: list[Tensor], rng: np.random.Generator,
              label: str, tol: float = FD_TOL) -> float:
    out = make_out()
    weights = rng.uniform(-1.0, 1.0, size=out.shape).astype(F32)
    an = analytic_grads(make_out, leaves, weights)
    fd = finite_diff_grads(make_out, leaves, weights)
    worst = max(max_rel_error(a, f) for a, f in zip(an, fd))
    _require(worst < tol, f"gradcheck {label}: max rel error {worst:.3e} >= {tol}")
    return worst


# --------------------------------------------------------------------------
# per-op gradient instances

def _leaf(rng, shape, lo=-1.5, hi=1.5):
    return Tensor(rng.uniform(lo, hi, size=shape).astype(F32), requires_grad=True)


def _op_instances(kind: str, rng: np.random.Generator):
    """Yield (make_out, leaves, label) cases for one op kind."""
    if kind == "matmul":
        n, k, m = (int(rng.integers(1, 5)) for _ in range(3))
        a, b = _leaf(rng, (n, k)), _leaf(rng, (k, m))
        if rng.random() < 0.5:
            bias = _leaf(rng, (m,))
            return lambda: ops.matmul(a, b, bias=bias), [a, b, bias]
        return lambda: ops.matmul(a, b), [a, b]
    if kind == "conv2d":
        ksz = int(rng.choice([3, 5]))
        stride = int(rng.choice([1, 2]))
        pad = str(rng.choice(["same", "valid"]))
        n, ci, co = int(rng.integers(1, 3)), int(rng.integers(1, 3)), int(rng.integers(1, 3))
        h = int(rng.integers(ksz, ksz + 4)) if pad == "valid" else int(rng.integers(3, 8))
        w = int(rng.integers(ksz, ksz + 4)) if pad == "valid" else int(rng.integers(3, 8))
        x = _leaf(rng, (n, ci, h, w))
        wt = _leaf(rng, (co, ci, ksz, ksz), lo=-0.6, hi=0.6)
        if rng.random() < 0.5:
            bias = _leaf(rng, (co,))
            return (lambda: ops.conv2d(x, wt, bias=bias, stride=stride, padding=pad),
                    [x, wt, bias])
        return lambda: ops.conv2d(x, wt, stride=stride, padding=pad), [x, wt]
    if kind in ("add", "mul"):
        fn = getattr(ops, kind)
        if rng.random() < 0.3:  # scalar-with-tensor broadcast
            a = _leaf(rng, tuple(rng.integers(1, 5, size=2)))
            b = _leaf(rng, ())
            return lambda: fn(a, b), [a, b]
        shape = tuple(rng.integers(1, 5, size=int(rng.integers(1, 4))))
        a, b = _leaf(rng, shape), _leaf(rng, shape)
        return lambda: fn(a, b), [a, b]
    if kind == "relu":
        shape = tuple(rng.integers(1, 6, size=2))
        # keep away from the kink at zero
        data = rng.uniform(0.1, 1.5, size=shape) * rng.choice([-1.0, 1.0], size=shape)
        x = Tensor(data.astype(F32), requires_grad=True)
        return lambda: ops.relu(x), [x]
    if kind in ("sigmoid", "tanh"):
        fn = getattr(ops, kind)
        x = _leaf(rng, tuple(rng.integers(1, 6, size=2)))
        return lambda: fn(x), [x]
    if kind == "mean_pool2d":
        kh, kw = int(rng.integers(1, 4)), int(rng.integers(1, 4))
        n, c = int(rng.integers(1, 3)), int(rng.integers(1, 3))
        x = _leaf(rng, (n, c, kh * int(rng.integers(1, 4)), kw * int(rng.integers(1, 4))))
        return lambda: ops.mean_pool2d(x, kh, kw), [x]
    if kind == "flatten":
        shape = tuple(rng.integers(1, 4, size=int(rng.integers(2, 5))))
        x = _leaf(rng, shape)
        return lambda: ops.flatten(x), [x]
    if kind == "concat":
        ndim = int(rng.integers(1, 4))
        ax = int(rng.integers(0, ndim))
        base = list(rng.integers(1, 4, size=ndim))
        parts = []
        for _ in range(int(rng.integers(2, 4))):
            s = list(base)
            s[ax] = int(rng.integers(1, 4))
            parts.append(_leaf(rng, tuple(s)))
        return lambda: ops.concat(parts, axis=ax), parts
    if kind == "slice":
        shape = tuple(rng.integers(2, 6, size=int(rng.integers(1, 4))))
        ax = int(rng.integers(0, len(shape)))
        start = int(rng.integers(0, shape[ax] - 1))
        stop = int(rng.integers(start + 1, shape[ax] + 1))
        x = _leaf(rng, shape)
        return lambda: ops.slice_(x, ax, start, stop), [x]
    if kind in ("softmax", "log_softmax"):
        fn = getattr(ops, kind)
        shape = tuple(rng.integers(2, 6, size=int(rng.integers(1, 3))))
        ax = int(rng.integers(0, len(shape)))
        x = _leaf(rng, shape, lo=-2.0, hi=2.0)
        return lambda: fn(x, axis=ax), [x]
    if kind in ("sum", "mean"):
        fn = getattr(ops, kind)
        shape = tuple(rng.integers(1, 5, size=int(rng.integers(1, 4))))
        x = _leaf(rng, shape)
        axis = None if rng.random() < 0.5 else int(rng.integers(0, len(shape)))
        return lambda: fn(x, axis=axis), [x]
    if kind == "scalar_mul":
        x = _leaf(rng, tuple(rng.integers(1, 5, size=2)))
        c = float(rng.uniform(-2, 2))
        return lambda: ops.scalar_mul(x, c), [x]
    raise ValueError(f"no gradcheck generator for kind {kind!r}")


def check_op_gradients(instances_per_kind: int = 10, seed: int = 1234) -> None:
    """Finite-difference check for every op kind (acceptance criterion 1)."""
    for kind in sorted(ops.OPS):
        rng = np.random.default_rng([seed, zlib.crc32(kind.encode())])
        for i in range(instances_per_kind):
            make_out, leaves = _op_instances(kind, rng)
            gradcheck(make_out, leaves, rng, f"{kind}[{i}]")


def check_lstm_gradients(instances: int = 10, seed: int = 77) -> None:
    """Finite-difference check of the recurrent cell, all weights and states."""
    rng = np.random.default_rng(seed)
    for i in range(instances):
        batch = int(rng.integers(1, 3))
        din, hid = int(rng.integers(1, 4)), int(rng.integers(1, 4))
        weights = init_lstm_weights(din, hid, rng)
        x = _leaf(rng, (batch, din))
        h0 = _leaf(rng, (batch, hid))
        c0 = _leaf(rng, (batch, hid))
        leaves = [x, h0, c0, weights["wx"], weights["wh"], weights["b"]]
        gradcheck(lambda: lstm_cell(x, h0, c0, weights)[0], leaves, rng, f"lstm_h[{i}]")
        gradcheck(lambda: lstm_cell(x, h0, c0, weights)[1], leaves, rng, f"lstm_c[{i}]")


# --------------------------------------------------------------------------
# structural tensor invariants

def check_softmax_properties(seed: int = 5) -> None:
    rng = np.random.default_rng(seed)
    for _ in range(20):
        shape = tuple(rng.integers(2, 7, size=int(rng.integers(1, 3))))
        ax = int(rng.integers(0, len(shape)))
        x = Tensor(rng.normal(0, 3, size=shape).astype(F32))
        s = ops.softmax(x, axis=ax)
        sums = np.sum(s.data, axis=ax)
        _require(np.all(np.abs(sums - 1.0) < 1e-6),
                 f"softmax sums deviate from 1 by {np.max(np.abs(sums - 1.0)):.2e}")
        ls = ops.log_softmax(x, axis=ax)
        _require(np.max(np.abs(ls.data - np.log(s.data))) < 1e-5,
                 "log_softmax differs from log(softmax) beyond 1e-5")


def check_gradient_accumulation(seed: int = 6) -> None:
    rng = np.random.default_rng(seed)
    x = _leaf(rng, (4, 3))
    loss = ops.sum(ops.mul(x, x))
    backward(loss, retain_graph=True)
    once = x.grad.copy()
    backward(loss, retain_graph=True)
    _require(np.array_equal(x.grad, once * 2),
             "second backward did not double the leaf grad exactly")


def check_graph_discipline(seed: int = 7) -> None:
    rng = np.random.default_rng(seed)
    x = _leaf(rng, (3,))
    loss = ops.sum(ops.mul(x, x))
    backward(loss)
    try:
        backward(loss)
    except GraphError:
        pass
    else:
        raise VerificationFailure("second backward on a consumed graph was not rejected")
    try:
        backward(ops.mul(x, x))
    except GraphError:
        pass
    else:
        raise VerificationFailure("non-scalar backward was not rejected")


def check_deterministic_replay(seed: int = 8) -> None:
    """Identical seed and op sequence must give bitwise-identical values."""
    def run():
        rng = np.random.default_rng(seed)
        x = _leaf(rng, (3, 4, 6, 6))
        w = _leaf(rng, (2, 4, 3, 3), lo=-0.5, hi=0.5)
        y = ops.relu(ops.conv2d(x, w, stride=2, padding="same"))
        z = ops.matmul(ops.flatten(y), _leaf(rng, (2 * 3 * 3, 5)))
        loss = ops.mean(ops.mul(z, z))
        backward(loss)
        return y.data.tobytes(), z.data.tobytes(), loss.data.tobytes(), x.grad.tobytes()

    _require(run() == run(), "replay with identical seed is not bitwise identical")
