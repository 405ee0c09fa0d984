"""Dense tensors with a reverse-mode tape.

A :class:`Tensor` wraps a numpy array of ``float32`` or ``float64``.  Every
differentiable operation in :mod:`sglanet.ops` records an :class:`OpNode` on
its output when gradients are enabled and at least one input requires them;
:meth:`Tensor.backward` walks those nodes in reverse topological order.
"""

from __future__ import annotations

import contextlib
import threading
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import BackwardTwiceError, NoBackwardError, PrecisionError, ShapeError

FLOAT_TYPES = (np.dtype(np.float32), np.dtype(np.float64))
DEFAULT_DTYPE = np.dtype(np.float32)

_state = threading.local()


def grad_enabled() -> bool:
    return getattr(_state, "enabled", True)


@contextlib.contextmanager
def no_grad():
    """Run forward passes without recording a tape."""
    prev = grad_enabled()
    _state.enabled = False
    try:
        yield
    finally:
        _state.enabled = prev


class OpNode:
    __slots__ = ("op", "inputs", "backward_fn", "consumed")

    def __init__(self, op: str, inputs: Sequence["Tensor"], backward_fn: Optional[Callable]):
        self.op = op
        self.inputs = tuple(inputs)
        # backward_fn(upstream) -> one gradient (or None) per input
        self.backward_fn = backward_fn
        self.consumed = False


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_node")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        elif arr.dtype not in FLOAT_TYPES:
            arr = arr.astype(DEFAULT_DTYPE)
        if arr.dtype not in FLOAT_TYPES:
            raise PrecisionError(f"unsupported dtype {arr.dtype}; use float32 or float64")
        if any(d < 1 for d in arr.shape):
            raise ShapeError("tensor", f"extents must be >= 1, got {arr.shape}")
        self.data = arr
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self._node: Optional[OpNode] = None

    # -- introspection ----------------------------------------------------
    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def op(self) -> Optional[str]:
        return self._node.op if self._node is not None else None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else _raise_item(self)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        tag = f", op={self.op}" if self._node is not None else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{tag})"

    # -- arithmetic sugar, delegating to ops --------------------------------
    def __add__(self, other):
        from . import ops

        return ops.add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        from . import ops

        if isinstance(other, Tensor):
            return ops.broadcast_mul(self, other)
        return ops.scale(self, other)

    __rmul__ = __mul__

    def zero_grad(self) -> None:
        if self.grad is not None:
            self.grad[...] = 0

    # -- reverse mode -------------------------------------------------------
    def backward(self, grad: Optional[np.ndarray] = None) -> None:
        """Propagate ``grad`` (default: ones, i.e. d self / d self) to every leaf."""
        if self._node is None:
            if self.requires_grad:
                _accumulate(self, np.ones_like(self.data) if grad is None else grad)
                return
            raise NoBackwardError("tensor was not produced by a differentiable operation")
        if grad is None:
            grad = np.ones_like(self.data)
        grad = np.asarray(grad, dtype=self.dtype)
        if grad.shape != self.shape:
            raise ShapeError("backward", f"upstream gradient shape {grad.shape} != {self.shape}")

        order = _topological(self)
        pending = {id(self): grad}
        for t in reversed(order):
            g = pending.pop(id(t), None)
            if g is None:
                continue
            node = t._node
            if node.consumed:
                raise BackwardTwiceError(f"backward already ran through '{node.op}'")
            node.consumed = True
            if node.backward_fn is None:
                raise NoBackwardError(f"operation '{node.op}' has no backward pass")
            grads = node.backward_fn(g)
            for inp, gi in zip(node.inputs, grads):
                if gi is None or not inp.requires_grad:
                    continue
                if gi.shape != inp.shape:
                    raise ShapeError(node.op, f"backward produced {gi.shape} for input {inp.shape}")
                if inp._node is None:
                    _accumulate(inp, gi)
                elif id(inp) in pending:
                    pending[id(inp)] = pending[id(inp)] + gi
                else:
                    pending[id(inp)] = gi


def _raise_item(t):
    raise ShapeError("item", f"tensor of shape {t.shape} is not a single value")


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g.astype(t.dtype, copy=False)


def _topological(root: Tensor) -> list:
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        t, expanded = stack.pop()
        if expanded:
            order.append(t)
            continue
        if id(t) in seen or t._node is None:
            continue
        seen.add(id(t))
        stack.append((t, True))
        for inp in t._node.inputs:
            if inp._node is not None and id(inp) not in seen:
                stack.append((inp, False))
    return order


class Parameter(Tensor):
    """A named trainable tensor whose gradient buffer starts at zero."""

    __slots__ = ("name",)

    def __init__(self, name: str, data, dtype=None):
        super().__init__(np.array(data, dtype=dtype, copy=True), requires_grad=True)
        self.name = name
        self.grad = np.zeros_like(self.data)

    def __repr__(self) -> str:
        return f"Parameter({self.name!r}, shape={self.shape}, dtype={self.dtype})"


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(x, dtype=dtype)


def check_precision(op: str, *tensors: Tensor) -> np.dtype:
    dt = tensors[0].dtype
    for t in tensors[1:]:
        if t.dtype != dt:
            raise PrecisionError(f"{op}: mixed precision {dt} and {t.dtype}")
    return dt


def make_result(op: str, data: np.ndarray, inputs: Sequence[Tensor], backward_fn) -> Tensor:
    """Wrap ``data`` and, when gradients are live, record the producing node."""
    out = Tensor(data)
    if grad_enabled() and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        out._node = OpNode(op, inputs, backward_fn)
    return out
