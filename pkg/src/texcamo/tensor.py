"""Dense float64 tensors with reverse-mode differentiation.

Every differentiable operation produces a new :class:`Tensor` that remembers
its parents and a closure mapping the output gradient to parent gradients.
Node ids grow monotonically, so sorting the reachable graph by id gives a
valid topological order; that sorted list plays the role of the tape.
"""

from __future__ import annotations

import contextlib
import itertools
from typing import Callable, Iterable, Iterator, Optional, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "ShapeError",
    "tensor",
    "zeros",
    "ones",
    "no_grad",
    "is_grad_enabled",
    "backward",
    "zero_grad",
    "tape",
]

_node_ids = itertools.count()
_grad_enabled = True


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible."""


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    """Disable graph recording inside the block (inference, parameter updates)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def is_grad_enabled() -> bool:
    return _grad_enabled


BackwardFn = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


class Tensor:
    """N-dimensional float64 array with an optional gradient buffer.

    ``data`` is a C-contiguous float64 ndarray. ``grad`` is ``None`` until a
    backward pass reaches the tensor; afterwards it has the same shape as
    ``data`` and accumulates across calls until :meth:`zero_grad`.
    """

    __slots__ = ("data", "grad", "requires_grad", "node_id", "_parents", "_backward", "op", "name")

    def __init__(
        self,
        data,
        requires_grad: bool = False,
        *,
        name: str = "",
        _parents: tuple["Tensor", ...] = (),
        _backward: Optional[BackwardFn] = None,
        op: str = "",
    ):
        arr = np.ascontiguousarray(data, dtype=np.float64)
        self.data = arr
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = bool(requires_grad)
        self.node_id = next(_node_ids)
        self._parents = _parents
        self._backward = _backward
        self.op = op
        self.name = name

    # ------------------------------------------------------------------ basics
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        backward(self)

    def __repr__(self) -> str:
        rg = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{rg}, op={self.op or 'leaf'!r})"

    def __len__(self) -> int:
        return self.data.shape[0]

    # -------------------------------------------------------------- operators
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(_as_tensor(other), self)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    # ------------------------------------------------------- method shortcuts
    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes)

    def relu(self):
        return relu(self)

    def sigmoid(self):
        return sigmoid(self)

    def sqrt(self):
        return sqrt(self)

    def abs(self):
        return tabs(self)

    def square(self):
        return square(self)


def tensor(data, requires_grad: bool = False, name: str = "") -> Tensor:
    return Tensor(data, requires_grad=requires_grad, name=name)


def zeros(shape, requires_grad: bool = False) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=requires_grad)


def ones(shape, requires_grad: bool = False) -> Tensor:
    return Tensor(np.ones(shape), requires_grad=requires_grad)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def make_result(data: np.ndarray, parents: Sequence[Tensor], backward_fn: BackwardFn, op: str) -> Tensor:
    """Wrap ``data`` as the output of ``op``; records the edge only when needed."""
    needs = _grad_enabled and any(p.requires_grad for p in parents)
    if not needs:
        return Tensor(data, op=op)
    return Tensor(data, requires_grad=True, _parents=tuple(parents), _backward=backward_fn, op=op)


# ---------------------------------------------------------------- autodiff
def tape(loss: Tensor) -> list[Tensor]:
    """Return every recorded node reachable from ``loss`` in topological order."""
    seen: dict[int, Tensor] = {}
    stack = [loss]
    while stack:
        node = stack.pop()
        if node.node_id in seen:
            continue
        seen[node.node_id] = node
        stack.extend(p for p in node._parents if p.requires_grad)
    return [seen[k] for k in sorted(seen)]


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(t) into ``t.grad`` for every leaf that requires grad.

    Gradients are added to existing buffers, so calling this twice on the same
    graph doubles them. Intermediate nodes do not keep gradients.
    """
    if loss.data.size != 1:
        raise ShapeError(f"backward() needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    grads: dict[int, np.ndarray] = {loss.node_id: np.ones_like(loss.data)}
    for node in reversed(tape(loss)):
        g = grads.pop(node.node_id, None)
        if g is None:
            continue
        if node._backward is None:
            if node.grad is None:
                node.grad = g.copy()
            else:
                node.grad += g
            continue
        parent_grads = node._backward(g)
        for parent, pg in zip(node._parents, parent_grads):
            if pg is None or not parent.requires_grad:
                continue
            if pg.shape != parent.data.shape:
                raise ShapeError(f"{node.op}: gradient shape {pg.shape} != input shape {parent.shape}")
            if parent.node_id in grads:
                grads[parent.node_id] = grads[parent.node_id] + pg
            else:
                grads[parent.node_id] = pg


def zero_grad(params: Iterable[Tensor]) -> None:
    for p in params:
        p.grad = None


# -------------------------------------------------------------- elementwise
def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _broadcast_shape(a: Tensor, b: Tensor, op: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from None


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_shape(a, b, "add")
    sa, sb = a.shape, b.shape
    return make_result(a.data + b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)), "add")


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_shape(a, b, "sub")
    sa, sb = a.shape, b.shape
    return make_result(a.data - b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)), "sub")


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_shape(a, b, "mul")
    ad, bd = a.data, b.data

    def bw(g):
        return _unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)

    return make_result(ad * bd, (a, b), bw, "mul")


def div(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_shape(a, b, "div")
    ad, bd = a.data, b.data
    out = ad / bd

    def bw(g):
        return _unbroadcast(g / bd, ad.shape), _unbroadcast(-g * out / bd, bd.shape)

    return make_result(out, (a, b), bw, "div")


def safe_div(a, b, eps: float = 1e-12) -> Tensor:
    """``a / b`` with the denominator pushed away from zero by ``eps`` (sign kept)."""
    b = _as_tensor(b)
    bd = b.data
    shift = np.where(bd >= 0, eps, -eps)
    return div(a, add(b, Tensor(shift)))


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return make_result(np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,), "relu")


def sigmoid(x: Tensor) -> Tensor:
    out = _sigmoid(x.data)
    return make_result(out, (x,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def _sigmoid(z: np.ndarray) -> np.ndarray:
    # two-branch form avoids overflow in exp
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def sqrt(x: Tensor) -> Tensor:
    out = np.sqrt(x.data)
    return make_result(out, (x,), lambda g: (g * 0.5 / out,), "sqrt")


def tabs(x: Tensor) -> Tensor:
    sign = np.sign(x.data)
    return make_result(np.abs(x.data), (x,), lambda g: (g * sign,), "abs")


def square(x: Tensor) -> Tensor:
    xd = x.data
    return make_result(xd * xd, (x,), lambda g: (2.0 * g * xd,), "square")


def exp(x: Tensor) -> Tensor:
    out = np.exp(x.data)
    return make_result(out, (x,), lambda g: (g * out,), "exp")


def log(x: Tensor) -> Tensor:
    xd = x.data
    return make_result(np.log(xd), (x,), lambda g: (g / xd,), "log")


_UNARY = {"relu": relu, "sigmoid": sigmoid, "sqrt": sqrt, "abs": tabs}
_BINARY = {"add": add, "sub": sub, "mul": mul, "div": div}


def elementwise(op: str, a, b=None) -> Tensor:
    """Dispatch by name: add, sub, mul, div, relu, sigmoid, sqrt, abs."""
    if op in _BINARY:
        if b is None:
            raise ValueError(f"{op} needs two operands")
        return _BINARY[op](a, b)
    if op in _UNARY:
        if b is not None:
            raise ValueError(f"{op} takes one operand")
        return _UNARY[op](_as_tensor(a))
    raise ValueError(f"unknown elementwise op {op!r}")


# ---------------------------------------------------------- shape / reduce
def tsum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    shape = x.shape
    out = x.data.sum(axis=axis, keepdims=keepdims)

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return make_result(np.asarray(out), (x,), bw, "sum")


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    n = x.data.size if axis is None else int(np.prod([x.shape[a] for a in np.atleast_1d(axis)]))
    return mul(tsum(x, axis=axis, keepdims=keepdims), 1.0 / n)


def reshape(x: Tensor, shape) -> Tensor:
    old = x.shape
    return make_result(x.data.reshape(shape), (x,), lambda g: (g.reshape(old),), "reshape")


def transpose(x: Tensor, axes) -> Tensor:
    axes = tuple(axes) if axes else tuple(reversed(range(x.ndim)))
    inv = tuple(np.argsort(axes))
    return make_result(np.ascontiguousarray(x.data.transpose(axes)), (x,), lambda g: (g.transpose(inv),), "transpose")


def getitem(x: Tensor, index) -> Tensor:
    shape = x.shape

    def bw(g):
        out = np.zeros(shape)
        np.add.at(out, index, g)
        return (out,)

    return make_result(np.ascontiguousarray(x.data[index]), (x,), bw, "getitem")


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    ref = tensors[0].shape
    for t in tensors[1:]:
        if t.ndim != len(ref) or any(t.shape[i] != ref[i] for i in range(len(ref)) if i != axis % len(ref)):
            raise ShapeError(f"concat: shapes {ref} and {t.shape} differ off axis {axis}")
    splits = np.cumsum([t.shape[axis] for t in tensors])[:-1]
    return make_result(
        np.concatenate([t.data for t in tensors], axis=axis),
        tuple(tensors),
        lambda g: tuple(np.split(g, splits, axis=axis)),
        "concat",
    )


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data

    def bw(g):
        ga = g @ np.swapaxes(bd, -1, -2)
        gb = np.swapaxes(ad, -1, -2) @ g
        return _unbroadcast(ga, ad.shape), _unbroadcast(gb, bd.shape)

    return make_result(ad @ bd, (a, b), bw, "matmul")
