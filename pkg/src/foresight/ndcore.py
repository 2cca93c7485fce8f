"""Dense float64 tensors with a reverse-mode gradient tape.

Every differentiable operation used by the predictor and the captioner is
defined here.  A tensor produced from at least one gradient-requiring input
remembers its parents and a closure that maps the output gradient to input
gradients; :func:`backward` orders the reachable nodes into a :class:`Tape`
and runs the closures in reverse.
"""

from __future__ import annotations

import itertools
from typing import Callable, Iterable, Sequence

import numpy as np

DTYPE = np.float64

_ids = itertools.count()


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible."""


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name", "op", "_parents", "_backward", "_id")

    def __init__(self, data, requires_grad: bool = False, name: str = "", op: str = "const",
                 parents: tuple = (), backward_fn: Callable | None = None):
        self.data = np.asarray(data, dtype=DTYPE)
        self.requires_grad = requires_grad
        self.name = name
        self.op = op
        self.grad = None
        self._parents = parents
        self._backward = backward_fn
        self._id = next(_ids)

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, op={self.op}{tag})"

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


class Parameter(Tensor):
    """A trainable leaf tensor whose gradient accumulates across backward calls."""

    __slots__ = ()

    def __init__(self, value, name: str = ""):
        super().__init__(np.array(value, dtype=DTYPE), requires_grad=True, name=name, op="param")
        self.grad = np.zeros_like(self.data)

    @property
    def value(self) -> np.ndarray:
        return self.data

    @property
    def gradient(self) -> np.ndarray:
        return self.grad

    def zero_grad(self):
        self.grad = np.zeros_like(self.data)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(data, op, parents, backward_fn) -> Tensor:
    """Build an op result; constants stay off the tape."""
    if any(p.requires_grad for p in parents):
        return Tensor(data, requires_grad=True, op=op, parents=parents, backward_fn=backward_fn)
    return Tensor(data, op=op)


def _check_finite_input(*ts: Tensor):
    for t in ts:
        if np.isnan(t.data).any():
            raise FloatingPointError(f"NaN in input to op (shape {t.shape})")


def _is_scalar(t: Tensor) -> bool:
    return t.data.ndim == 0 or t.shape == (1,)


def _binary_shapes(a: Tensor, b: Tensor, op: str):
    if a.shape == b.shape or _is_scalar(a) or _is_scalar(b):
        return
    raise ShapeError(f"{op}: incompatible shapes {a.shape} and {b.shape}")


def _reduce_to(grad: np.ndarray, like: Tensor) -> np.ndarray:
    if grad.shape == like.shape:
        return grad
    return np.asarray(grad.sum(), dtype=DTYPE).reshape(like.shape)


# ---------------------------------------------------------------------------
# linear algebra


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    out = a.data @ b.data

    def back(g):
        return g @ b.data.T, a.data.T @ g

    return _node(out, "matmul", (a, b), back)


def add_bias(x, b) -> Tensor:
    """Row-broadcast add of a vector ``b`` (n,) to every row of ``x`` (batch, n)."""
    x, b = as_tensor(x), as_tensor(b)
    if x.data.ndim != 2 or b.data.ndim != 1 or x.shape[1] != b.shape[0]:
        raise ShapeError(f"add_bias: cannot add {b.shape} to rows of {x.shape}")

    def back(g):
        return g, g.sum(axis=0)

    return _node(x.data + b.data, "add_bias", (x, b), back)


# ---------------------------------------------------------------------------
# elementwise


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _binary_shapes(a, b, "add")

    def back(g):
        return _reduce_to(g, a), _reduce_to(g, b)

    return _node(a.data + b.data, "add", (a, b), back)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _binary_shapes(a, b, "sub")

    def back(g):
        return _reduce_to(g, a), _reduce_to(-g, b)

    return _node(a.data - b.data, "sub", (a, b), back)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _binary_shapes(a, b, "mul")

    def back(g):
        return _reduce_to(g * b.data, a), _reduce_to(g * a.data, b)

    return _node(a.data * b.data, "mul", (a, b), back)


def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    # split by sign so exp never overflows
    d = x.data
    out = np.empty_like(d)
    pos = d >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-d[pos]))
    e = np.exp(d[~pos])
    out[~pos] = e / (1.0 + e)

    def back(g):
        return (g * out * (1.0 - out),)

    return _node(out, "sigmoid", (x,), back)


def tanh(x) -> Tensor:
    x = as_tensor(x)
    out = np.tanh(x.data)

    def back(g):
        return (g * (1.0 - out * out),)

    return _node(out, "tanh", (x,), back)


def relu(x) -> Tensor:
    x = as_tensor(x)
    mask = x.data > 0
    out = np.where(mask, x.data, 0.0)

    def back(g):
        return (g * mask,)

    return _node(out, "relu", (x,), back)


def square(x) -> Tensor:
    x = as_tensor(x)

    def back(g):
        return (2.0 * g * x.data,)

    return _node(x.data * x.data, "square", (x,), back)


def log(x) -> Tensor:
    x = as_tensor(x)

    def back(g):
        return (g / x.data,)

    return _node(np.log(x.data), "log", (x,), back)


def exp(x) -> Tensor:
    x = as_tensor(x)
    out = np.exp(x.data)

    def back(g):
        return (g * out,)

    return _node(out, "exp", (x,), back)


_ELEMENTWISE = {"sigmoid": sigmoid, "tanh": tanh, "relu": relu, "add": add, "mul": mul,
                "sub": sub, "square": square, "log": log, "exp": exp}


def elementwise(op: str, *args) -> Tensor:
    try:
        fn = _ELEMENTWISE[op]
    except KeyError:
        raise ValueError(f"unknown elementwise op {op!r}") from None
    return fn(*args)


# ---------------------------------------------------------------------------
# normalisers (last axis)


def softmax(x) -> Tensor:
    x = as_tensor(x)
    _check_finite_input(x)
    if x.data.ndim == 0 or x.shape[-1] < 1:
        raise ShapeError(f"softmax: needs at least one element on the last axis, got {x.shape}")
    z = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=-1, keepdims=True)

    def back(g):
        return (out * (g - (g * out).sum(axis=-1, keepdims=True)),)

    return _node(out, "softmax", (x,), back)


def log_softmax(x) -> Tensor:
    x = as_tensor(x)
    _check_finite_input(x)
    z = x.data - x.data.max(axis=-1, keepdims=True)
    out = z - np.log(np.exp(z).sum(axis=-1, keepdims=True))

    def back(g):
        p = np.exp(out)
        return (g - p * g.sum(axis=-1, keepdims=True),)

    return _node(out, "log_softmax", (x,), back)


# ---------------------------------------------------------------------------
# reductions and structural ops


def reduce_sum(x) -> Tensor:
    x = as_tensor(x)

    def back(g):
        return (np.broadcast_to(g, x.shape).copy(),)

    return _node(np.asarray(x.data.sum()), "sum", (x,), back)


def reduce_mean(x) -> Tensor:
    x = as_tensor(x)
    n = x.size

    def back(g):
        return (np.full(x.shape, g / n),)

    return _node(np.asarray(x.data.mean()), "mean", (x,), back)


def concat(xs: Sequence[Tensor], axis: int = 1) -> Tensor:
    xs = [as_tensor(x) for x in xs]
    if not xs:
        raise ShapeError("concat: nothing to concatenate")
    other = [s for i, s in enumerate(xs[0].shape) if i != axis % xs[0].data.ndim]
    for x in xs[1:]:
        if [s for i, s in enumerate(x.shape) if i != axis % x.data.ndim] != other:
            raise ShapeError(f"concat: mismatched shapes {[t.shape for t in xs]}")
    sizes = [x.shape[axis] for x in xs]
    cuts = np.cumsum(sizes)[:-1]

    def back(g):
        return tuple(np.split(g, cuts, axis=axis))

    return _node(np.concatenate([x.data for x in xs], axis=axis), "concat", tuple(xs), back)


def slice_cols(x, start: int, stop: int) -> Tensor:
    x = as_tensor(x)

    def back(g):
        full = np.zeros_like(x.data)
        full[:, start:stop] = g
        return (full,)

    return _node(x.data[:, start:stop], "slice_cols", (x,), back)


def take_rows(table, indices) -> Tensor:
    """Row lookup ``table[indices]``; equal to ``onehot(indices) @ table``."""
    table = as_tensor(table)
    idx = np.asarray(indices, dtype=np.int64)
    if idx.size and (idx.min() < 0 or idx.max() >= table.shape[0]):
        raise IndexError(f"take_rows: index out of range for table with {table.shape[0]} rows")

    def back(g):
        full = np.zeros_like(table.data)
        np.add.at(full, idx, g)
        return (full,)

    return _node(table.data[idx], "take_rows", (table,), back)


def pick(x, indices) -> Tensor:
    """Select ``x[i, indices[i]]`` for every row; returns shape (batch,)."""
    x = as_tensor(x)
    idx = np.asarray(indices, dtype=np.int64)
    rows = np.arange(x.shape[0])
    if idx.shape != (x.shape[0],):
        raise ShapeError(f"pick: need one index per row of {x.shape}, got {idx.shape}")
    if idx.size and (idx.min() < 0 or idx.max() >= x.shape[1]):
        raise IndexError(f"pick: class index out of range [0, {x.shape[1]})")

    def back(g):
        full = np.zeros_like(x.data)
        full[rows, idx] = g
        return (full,)

    return _node(x.data[rows, idx], "pick", (x,), back)


# ---------------------------------------------------------------------------
# tape and backward pass


class Tape:
    """Nodes reachable from a loss, in topological (creation) order."""

    def __init__(self, nodes: list[Tensor]):
        self.nodes = nodes
        self.gradients: dict[int, np.ndarray] = {}

    @classmethod
    def record(cls, root: Tensor) -> "Tape":
        seen = {}
        stack = [root]
        while stack:
            t = stack.pop()
            if t._id in seen:
                continue
            seen[t._id] = t
            stack.extend(p for p in t._parents if p.requires_grad)
        # ids grow with creation, so sorting by id is a valid topological order
        return cls(sorted(seen.values(), key=lambda t: t._id))

    def backward(self, seed: np.ndarray) -> None:
        root = self.nodes[-1]
        grads = self.gradients
        grads[root._id] = seed
        for t in reversed(self.nodes):
            g = grads.get(t._id)
            if g is None:
                continue
            if t._backward is None:
                if isinstance(t, Parameter):
                    t.grad = t.grad + g
                continue
            for parent, pg in zip(t._parents, t._backward(g)):
                if not parent.requires_grad:
                    continue
                prev = grads.get(parent._id)
                grads[parent._id] = pg if prev is None else prev + pg


def backward(loss: Tensor) -> Tape:
    """Accumulate d(loss)/d(param) into every reachable :class:`Parameter`."""
    if loss.size != 1:
        raise ShapeError(f"backward: loss must be scalar, got shape {loss.shape}")
    if not loss.requires_grad:
        return Tape([])
    tape = Tape.record(loss)
    tape.backward(np.ones_like(loss.data))
    return tape


def zero_grads(params: Iterable[Parameter]) -> None:
    for p in params:
        p.zero_grad()


def grad_check(f: Callable[[], Tensor], params: Sequence[Parameter], eps: float = 1e-5,
               analytic: Sequence[np.ndarray] | None = None, floor: float = 1e-8, stencil: int = 2) -> float:
    """Max relative error between backprop and central finite differences.

    ``f`` must rebuild the graph from the current parameter values on every
    call.  ``analytic`` overrides the backprop gradients (used for fault
    injection in tests).  ``stencil=4`` uses the fourth-order central
    difference, which tolerates a larger ``eps`` and so resolves gradient
    entries far smaller than the loss itself.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    if stencil not in (2, 4):
        raise ValueError("stencil must be 2 or 4")

    def at(flat, i, x):
        flat[i] = x
        return f().item()

    if analytic is None:
        zero_grads(params)
        backward(f())
        analytic = [p.grad.copy() for p in params]
    worst = 0.0
    for p, a in zip(params, analytic):
        flat = p.data.reshape(-1)
        a = np.asarray(a).reshape(-1)
        for i in range(flat.size):
            old = flat[i]
            num = (at(flat, i, old + eps) - at(flat, i, old - eps)) / (2 * eps)
            if stencil == 4:
                far = (at(flat, i, old + 2 * eps) - at(flat, i, old - 2 * eps)) / (4 * eps)
                num = (4 * num - far) / 3
            flat[i] = old
            err = abs(a[i] - num) / max(abs(a[i]), abs(num), floor)
            worst = max(worst, err)
    return worst
