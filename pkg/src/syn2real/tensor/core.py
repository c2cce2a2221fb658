"""Dense float32 tensors with reverse-mode automatic differentiation.

Values are stored as float32; reducing operations accumulate in float64 and
round once, so repeated runs are bitwise reproducible. The graph is the set
of ``Node`` records hanging off each non-leaf tensor; ``backward`` walks it
in exact reverse topological order. A graph is consumed by ``backward`` and
a second call without ``retain_graph=True`` is rejected.
"""

from __future__ import annotations

from typing import Callable, Optional, Sequence

import numpy as np

from ..errors import GraphError, NonFiniteError

__all__ = ["Tensor", "Node", "backward", "no_grad", "grad_enabled"]

_GRAD_ENABLED = True


class no_grad:
    """Context manager that disables graph recording (eval / frozen branches)."""

    def __enter__(self):
        global _GRAD_ENABLED
        self._prev = _GRAD_ENABLED
        _GRAD_ENABLED = False
        return self

    def __exit__(self, *exc):
        global _GRAD_ENABLED
        _GRAD_ENABLED = self._prev
        return False


def grad_enabled() -> bool:
    return _GRAD_ENABLED


class Node:
    """One recorded operation: its inputs and the local backward rule.

    ``backward_rule(grad_out)`` returns one gradient array (or None) per
    input, in input order.
    """

    __slots__ = ("op", "inputs", "backward_rule", "consumed")

    def __init__(self, op: str, inputs: Sequence["Tensor"],
                 backward_rule: Callable[[np.ndarray], tuple]):
        self.op = op
        self.inputs = tuple(inputs)
        self.backward_rule = backward_rule
        self.consumed = False


class Tensor:
    """Row-major float32 array, optionally carrying a grad buffer and a
    link to the operation that produced it."""

    __slots__ = ("data", "grad", "requires_grad", "node", "name")

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None):
        arr = np.ascontiguousarray(data, dtype=np.float32)
        if not np.all(np.isfinite(arr)):
            raise NonFiniteError(
                f"tensor {name or ''!r} constructed with non-finite values")
        self.data = arr
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = bool(requires_grad)
        self.node: Optional[Node] = None
        self.name = name

    # -- construction helpers -------------------------------------------------

    @staticmethod
    def _from_op(op: str, out_data: np.ndarray, inputs: Sequence["Tensor"],
                 backward_rule) -> "Tensor":
        """Wrap an op output; records a graph node when grads are needed."""
        if not np.all(np.isfinite(out_data)):
            raise NonFiniteError(f"op '{op}' produced non-finite values")
        t = Tensor.__new__(Tensor)
        t.data = out_data
        t.grad = None
        t.name = None
        if _GRAD_ENABLED and any(i.requires_grad for i in inputs):
            t.requires_grad = True
            t.node = Node(op, inputs, backward_rule)
        else:
            t.requires_grad = False
            t.node = None
        return t

    # -- basic properties ------------------------------------------------------

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise GraphError(f"item() on non-scalar tensor of shape {self.shape}")
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        t = Tensor.__new__(Tensor)
        t.data = self.data
        t.grad = None
        t.requires_grad = False
        t.node = None
        t.name = self.name
        return t

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{tag})"

    # Small conveniences used by the losses / policy code.
    def __add__(self, other):
        from . import ops
        if not isinstance(other, Tensor):
            other = Tensor(np.float32(other))
        return ops.add(self, other)

    def __mul__(self, other):
        from . import ops
        if isinstance(other, Tensor):
            return ops.mul(self, other)
        return ops.scalar_mul(self, float(other))

    __rmul__ = __mul__


def _topo_order(loss: Tensor) -> list:
    """Post-order over non-leaf tensors reachable from ``loss``; reversing it
    gives the exact reverse topological order backward requires."""
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        t, expanded = stack.pop()
        if expanded:
            order.append(t)
            continue
        if id(t) in seen:
            continue
        seen.add(id(t))
        stack.append((t, True))
        for inp in t.node.inputs:
            if inp.node is not None and id(inp) not in seen:
                stack.append((inp, False))
    return order


def backward(loss: Tensor, retain_graph: bool = False) -> None:
    """Accumulate dLoss/dLeaf into every reachable requires_grad leaf.

    Grads accumulate across calls until the leaves are zero_grad'ed. The
    graph is consumed unless ``retain_graph`` is set; a repeat backward on a
    consumed graph is rejected.
    """
    if loss.data.size != 1:
        raise GraphError(f"backward requires a scalar loss, got shape {loss.shape}")
    if loss.node is None:
        raise GraphError("backward on a tensor not produced by a recorded graph")

    order = _topo_order(loss)
    for t in order:
        if t.node.consumed:
            raise GraphError(
                f"graph already consumed at op '{t.node.op}'; "
                "re-run forward or pass retain_graph=True")

    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for t in reversed(order):
        g = grads.pop(id(t), None)
        if g is None:
            continue
        in_grads = t.node.backward_rule(g)
        if not retain_graph:
            t.node.consumed = True
        for inp, ig in zip(t.node.inputs, in_grads):
            if ig is None or not inp.requires_grad:
                continue
            ig = np.asarray(ig, dtype=np.float32)
            if ig.shape != inp.data.shape:  # backward rules must be exact
                raise GraphError(
                    f"backward of '{t.node.op}' returned grad shape {ig.shape} "
                    f"for input of shape {inp.data.shape}")
            if inp.node is None:
                if inp.grad is None:
                    inp.grad = np.zeros_like(inp.data)
                inp.grad += ig
            else:
                acc = grads.get(id(inp))
                if acc is None:
                    grads[id(inp)] = ig.astype(np.float32, copy=True)
                else:
                    acc += ig
