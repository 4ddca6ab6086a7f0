"""
Tensor — numpy array plus a reverse-mode gradient tape.

Each operation records its parents and a closure mapping the output gradient
to one gradient per parent. `backward()` walks the graph in reverse
topological order. Intermediate gradients live only for the duration of the
walk; leaves with requires_grad accumulate into `.grad`, so two backward
passes without `zero_grad` add up.
"""
from __future__ import annotations

import contextlib
import logging
import threading
from typing import Callable, Iterator, Optional, Sequence, Tuple, Union

import numpy as np

from utils.errors import GradientError, ShapeError

logger = logging.getLogger(__name__)

ArrayLike = Union["Tensor", np.ndarray, float, int]
BackwardFn = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]

# per thread, so inference workers can run under no_grad independently
_state = threading.local()


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    """Operations inside the block record no graph."""
    previous = is_grad_enabled()
    _state.enabled = False
    try:
        yield
    finally:
        _state.enabled = previous


def is_grad_enabled() -> bool:
    return getattr(_state, "enabled", True)


def unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to `shape`."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Tensor:
    # ndarray (op) Tensor defers to the Tensor operators
    __array_ufunc__ = None

    def __init__(
        self,
        data,
        requires_grad: bool = False,
        parents: Tuple[Tensor, ...] = (),
        backward_fn: Optional[BackwardFn] = None,
        op: str = "",
        dtype=None,
    ):
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        elif not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(np.float64)
        self.data: np.ndarray = arr
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self._parents = parents
        self._backward_fn = backward_fn
        self.op = op

    # ------------------------------------------------------------------
    # Construction helpers
    # ------------------------------------------------------------------

    @classmethod
    def from_op(cls, data: np.ndarray, parents: Sequence[Tensor], backward_fn: BackwardFn, op: str) -> Tensor:
        """Result of an operation; graph edges are kept only when some parent needs them."""
        needs = is_grad_enabled() and any(p.requires_grad for p in parents)
        if not needs:
            return cls(data)
        return cls(data, requires_grad=True, parents=tuple(parents), backward_fn=backward_fn, op=op)

    def _lift(self, other: ArrayLike) -> Tensor:
        if isinstance(other, Tensor):
            return other
        return Tensor(np.asarray(other, dtype=self.dtype))

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        return self._backward_fn is None

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data.sum())

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> Tensor:
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    # ------------------------------------------------------------------
    # Reverse pass
    # ------------------------------------------------------------------

    def _topo_order(self) -> list:
        order, seen = [], set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if parent.requires_grad and id(parent) not in seen:
                    stack.append((parent, False))
        return order

    def backward(self, grad: Optional[np.ndarray] = None) -> None:
        if grad is None:
            if self.data.size != 1:
                raise GradientError(f"backward() needs a scalar, got shape {self.shape}")
            grad = np.ones_like(self.data)
        grad = np.asarray(grad, dtype=self.dtype)
        if grad.shape != self.shape:
            raise ShapeError(f"seed gradient {grad.shape} does not match tensor {self.shape}")
        if not self.requires_grad:
            raise GradientError("backward() on a tensor that does not require grad")

        pending = {id(self): grad}
        for node in reversed(self._topo_order()):
            g = pending.pop(id(node), None)
            if g is None:
                continue
            if node.is_leaf:
                node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward_fn(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                pending[key] = pg if key not in pending else pending[key] + pg

    # ------------------------------------------------------------------
    # Elementwise arithmetic
    # ------------------------------------------------------------------

    def __add__(self, other: ArrayLike) -> Tensor:
        other = self._lift(other)
        a, b = self.shape, other.shape
        return Tensor.from_op(
            self.data + other.data, (self, other),
            lambda g: (unbroadcast(g, a), unbroadcast(g, b)), "add",
        )

    __radd__ = __add__

    def __neg__(self) -> Tensor:
        return Tensor.from_op(-self.data, (self,), lambda g: (-g,), "neg")

    def __sub__(self, other: ArrayLike) -> Tensor:
        other = self._lift(other)
        a, b = self.shape, other.shape
        return Tensor.from_op(
            self.data - other.data, (self, other),
            lambda g: (unbroadcast(g, a), unbroadcast(-g, b)), "sub",
        )

    def __rsub__(self, other: ArrayLike) -> Tensor:
        return self._lift(other) - self

    def __mul__(self, other: ArrayLike) -> Tensor:
        other = self._lift(other)
        x, y = self.data, other.data
        return Tensor.from_op(
            x * y, (self, other),
            lambda g: (unbroadcast(g * y, x.shape), unbroadcast(g * x, y.shape)), "mul",
        )

    __rmul__ = __mul__

    def __truediv__(self, other: ArrayLike) -> Tensor:
        other = self._lift(other)
        x, y = self.data, other.data
        return Tensor.from_op(
            x / y, (self, other),
            lambda g: (unbroadcast(g / y, x.shape), unbroadcast(-g * x / (y * y), y.shape)), "div",
        )

    def __rtruediv__(self, other: ArrayLike) -> Tensor:
        return self._lift(other) / self

    def __pow__(self, exponent: Union[float, np.ndarray]) -> Tensor:
        """Power with a constant (scalar or broadcastable array) exponent."""
        if isinstance(exponent, Tensor):
            raise TypeError("tensor exponents are not supported")
        e = np.asarray(exponent, dtype=self.dtype)
        x = self.data
        out = np.power(x, e)
        return Tensor.from_op(
            out, (self,), lambda g: (unbroadcast(g * e * np.power(x, e - 1), x.shape),), "pow",
        )

    def __matmul__(self, other: Tensor) -> Tensor:
        other = self._lift(other)
        if self.ndim != 2 or other.ndim != 2 or self.shape[1] != other.shape[0]:
            raise ShapeError(f"matmul needs (n,k)@(k,m), got {self.shape} @ {other.shape}")
        x, y = self.data, other.data
        return Tensor.from_op(x @ y, (self, other), lambda g: (g @ y.T, x.T @ g), "matmul")

    # ------------------------------------------------------------------
    # Unary functions
    # ------------------------------------------------------------------

    def exp(self) -> Tensor:
        out = np.exp(self.data)
        return Tensor.from_op(out, (self,), lambda g: (g * out,), "exp")

    def log(self) -> Tensor:
        x = self.data
        return Tensor.from_op(np.log(x), (self,), lambda g: (g / x,), "log")

    def abs(self) -> Tensor:
        x = self.data
        return Tensor.from_op(np.abs(x), (self,), lambda g: (g * np.sign(x),), "abs")

    def clip(self, lo: Optional[float] = None, hi: Optional[float] = None) -> Tensor:
        """Clamp; the gradient passes where lo <= x <= hi."""
        x = self.data
        lo_v = -np.inf if lo is None else lo
        hi_v = np.inf if hi is None else hi
        mask = (x >= lo_v) & (x <= hi_v)
        return Tensor.from_op(np.clip(x, lo_v, hi_v), (self,), lambda g: (g * mask,), "clip")

    def relu(self) -> Tensor:
        x = self.data
        mask = x > 0
        return Tensor.from_op(np.maximum(x, 0).astype(x.dtype), (self,), lambda g: (g * mask,), "relu")

    def leaky_relu(self, slope: float = 0.2) -> Tensor:
        x = self.data
        factor = np.where(x > 0, 1.0, slope).astype(x.dtype)
        return Tensor.from_op(x * factor, (self,), lambda g: (g * factor,), "leaky_relu")

    def sigmoid(self) -> Tensor:
        x = self.data
        out = np.empty_like(x)
        pos = x >= 0
        out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
        ex = np.exp(x[~pos])
        out[~pos] = ex / (1.0 + ex)
        return Tensor.from_op(out, (self,), lambda g: (g * out * (1.0 - out),), "sigmoid")

    # ------------------------------------------------------------------
    # Reductions and shape
    # ------------------------------------------------------------------

    def sum(self, axis=None, keepdims: bool = False) -> Tensor:
        shape = self.shape

        def back(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            return (np.broadcast_to(g, shape).copy(),)

        return Tensor.from_op(self.data.sum(axis=axis, keepdims=keepdims), (self,), back, "sum")

    def mean(self, axis=None, keepdims: bool = False) -> Tensor:
        if axis is None:
            count = self.data.size
        else:
            axes = axis if isinstance(axis, tuple) else (axis,)
            count = int(np.prod([self.shape[a] for a in axes]))
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / count)

    def reshape(self, *shape) -> Tensor:
        if len(shape) == 1 and isinstance(shape[0], tuple):
            shape = shape[0]
        original = self.shape
        return Tensor.from_op(self.data.reshape(shape), (self,), lambda g: (g.reshape(original),), "reshape")

    def transpose(self, *axes) -> Tensor:
        if not axes:
            axes = tuple(reversed(range(self.ndim)))
        inverse = tuple(np.argsort(axes))
        return Tensor.from_op(self.data.transpose(axes), (self,), lambda g: (g.transpose(inverse),), "transpose")

    @property
    def T(self) -> Tensor:
        return self.transpose()


def tensor(data, requires_grad: bool = False, dtype=None) -> Tensor:
    return Tensor(np.array(data, dtype=dtype), requires_grad=requires_grad)
