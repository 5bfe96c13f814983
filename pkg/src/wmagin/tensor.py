"""Dense float64 tensors with define-by-run reverse-mode autodiff.

Every operation that touches a tensor requiring gradients records its
parents and a closure mapping the upstream gradient to input gradients.
``Tensor.backward`` walks that graph in reverse topological order.  The
graph is rebuilt on every forward pass and holds no global state, so
independent forward/backward passes can run on separate threads.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np


class DimensionError(ValueError):
    """Raised when operand shapes are incompatible."""


def _as_array(value) -> np.ndarray:
    return np.asarray(value, dtype=np.float64)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` (inverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    """A float64 array that can take part in gradient computation."""

    def __init__(self, data, requires_grad: bool = False, _parents: tuple = (), _op: str = ""):
        self.data = _as_array(data)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = _parents
        self._backward: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None
        self._op = _op

    # ---- basic protocol -------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def __len__(self) -> int:
        return len(self.data)

    def __repr__(self) -> str:
        rg = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor({np.array2string(self.data, precision=6)}{rg})"

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    # ---- operator sugar -------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, index):
        return getitem(self, index)

    @property
    def T(self) -> "Tensor":
        return transpose(self)

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        return reduce(self, axis, "sum", keepdims)

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        return reduce(self, axis, "mean", keepdims)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def exp(self) -> "Tensor":
        return activation(self, "exp")

    def sigmoid(self) -> "Tensor":
        return activation(self, "sigmoid")

    def tanh(self) -> "Tensor":
        return activation(self, "tanh")

    def relu(self) -> "Tensor":
        return activation(self, "relu")

    # ---- reverse mode ---------------------------------------------------
    def backward(self, grad=None) -> None:
        """Accumulate d(self)/d(t) into ``t.grad`` for every reachable ``t``.

        ``grad`` defaults to 1 and is only accepted for scalar outputs
        unless given explicitly.
        """
        if grad is None:
            if self.data.size != 1:
                raise DimensionError(
                    f"backward() needs a scalar output, got shape {self.shape}"
                )
            grad = np.ones_like(self.data)
        else:
            grad = _as_array(grad)
            if grad.shape != self.shape:
                raise DimensionError(
                    f"seed gradient shape {grad.shape} does not match output {self.shape}"
                )
        if not self.requires_grad:
            return

        order = _topological_order(self)
        grads: dict[int, np.ndarray] = {id(self): grad}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            node.grad = g.copy() if node.grad is None else node.grad + g
            if node._backward is None:
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg


def _topological_order(root: Tensor) -> list[Tensor]:
    # iterative DFS: recurrent unrolls make graphs deeper than the recursion limit
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
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


def tensor(data, requires_grad: bool = False) -> Tensor:
    return Tensor(data, requires_grad=requires_grad)


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _result(data: np.ndarray, parents: tuple[Tensor, ...], backward, op: str) -> Tensor:
    needs = any(p.requires_grad for p in parents)
    out = Tensor(data, requires_grad=needs, _parents=parents if needs else (), _op=op)
    if needs:
        out._backward = backward
    return out


def _broadcast_shape(a: np.ndarray, b: np.ndarray, op: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"{op}: cannot broadcast shapes {a.shape} and {b.shape}") from None


# ---- elementwise ----------------------------------------------------------
def elementwise(a, b, kind: str) -> Tensor:
    """``kind`` is one of add, sub, mul."""
    if kind == "add":
        return add(a, b)
    if kind == "sub":
        return sub(a, b)
    if kind == "mul":
        return mul(a, b)
    raise ValueError(f"unknown elementwise kind {kind!r}")


def add(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    _broadcast_shape(a.data, b.data, "add")

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _result(a.data + b.data, (a, b), backward, "add")


def sub(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    _broadcast_shape(a.data, b.data, "sub")

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _result(a.data - b.data, (a, b), backward, "sub")


def mul(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    _broadcast_shape(a.data, b.data, "mul")

    def backward(g):
        ga = _unbroadcast(g * b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(g * a.data, b.shape) if b.requires_grad else None
        return ga, gb

    return _result(a.data * b.data, (a, b), backward, "mul")


def div(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    _broadcast_shape(a.data, b.data, "div")
    out = a.data / b.data

    def backward(g):
        ga = _unbroadcast(g / b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(-g * out / b.data, b.shape) if b.requires_grad else None
        return ga, gb

    return _result(out, (a, b), backward, "div")


# ---- activations ----------------------------------------------------------
def _sigmoid(x: np.ndarray) -> np.ndarray:
    # split by sign so exp never overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def activation(a, kind: str) -> Tensor:
    """Elementwise sigmoid, tanh, relu or exp with analytic derivative."""
    a = _wrap(a)
    x = a.data
    if kind == "sigmoid":
        out = _sigmoid(x)

        def backward(g):
            return (g * out * (1.0 - out),)
    elif kind == "tanh":
        out = np.tanh(x)

        def backward(g):
            return (g * (1.0 - out * out),)
    elif kind == "relu":
        out = np.where(x > 0, x, 0.0)

        def backward(g):
            return (g * (x > 0),)
    elif kind == "exp":
        out = np.exp(x)

        def backward(g):
            return (g * out,)
    else:
        raise ValueError(f"unknown activation {kind!r}")
    return _result(out, (a,), backward, kind)


def sigmoid(a) -> Tensor:
    return activation(a, "sigmoid")


def tanh(a) -> Tensor:
    return activation(a, "tanh")


def relu(a) -> Tensor:
    return activation(a, "relu")


def exp(a) -> Tensor:
    return activation(a, "exp")


# ---- linear algebra -------------------------------------------------------
def matmul(a, b) -> Tensor:
    """Matrix product; leading axes of either operand act as batch axes."""
    a, b = _wrap(a), _wrap(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    try:
        out = np.matmul(a.data, b.data)
    except ValueError:
        raise DimensionError(f"matmul: incompatible shapes {a.shape} and {b.shape}") from None

    def backward(g):
        ga = gb = None
        if a.requires_grad:
            ga = _unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape)
        if b.requires_grad:
            gb = _unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape)
        return ga, gb

    return _result(out, (a, b), backward, "matmul")


def transpose(a) -> Tensor:
    """Swap the last two axes."""
    a = _wrap(a)

    def backward(g):
        return (np.swapaxes(g, -1, -2),)

    return _result(np.swapaxes(a.data, -1, -2), (a,), backward, "transpose")


def reshape(a, shape) -> Tensor:
    a = _wrap(a)
    old = a.shape

    def backward(g):
        return (g.reshape(old),)

    return _result(a.data.reshape(shape), (a,), backward, "reshape")


# ---- reductions / normalisation ------------------------------------------
def _check_axis(a: Tensor, axis) -> None:
    if axis is None:
        return
    axes = axis if isinstance(axis, tuple) else (axis,)
    for ax in axes:
        if not -a.ndim <= ax < a.ndim:
            raise DimensionError(f"axis {ax} out of range for shape {a.shape}")


def reduce(a, axis=None, kind: str = "sum", keepdims: bool = False) -> Tensor:
    """Sum or mean along ``axis`` (all axes when None)."""
    a = _wrap(a)
    _check_axis(a, axis)
    if kind == "sum":
        out = a.data.sum(axis=axis, keepdims=keepdims)
        count = 1.0
    elif kind == "mean":
        out = a.data.mean(axis=axis, keepdims=keepdims)
        count = a.data.size / max(out.size, 1)
    else:
        raise ValueError(f"unknown reduction {kind!r}")
    shape = a.shape

    def backward(g):
        if not keepdims and axis is not None:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g / count, shape).copy(),)

    return _result(np.asarray(out), (a,), backward, kind)


def softmax(a, axis: int = -1) -> Tensor:
    """Softmax along ``axis`` with max subtraction.

    Entries equal to -inf get weight exactly 0.
    """
    a = _wrap(a)
    _check_axis(a, axis)
    x = a.data
    shift = np.max(x, axis=axis, keepdims=True)
    shift = np.where(np.isfinite(shift), shift, 0.0)
    e = np.exp(x - shift)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return _result(out, (a,), backward, "softmax")


def softmax_rows(a) -> Tensor:
    return softmax(a, axis=-1)


def cross_entropy_logits(logits, labels) -> Tensor:
    """Mean over the batch of -log softmax(logits)[label]."""
    logits = _wrap(logits)
    if logits.ndim == 1:
        logits = reshape(logits, (1, -1))
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    batch, classes = logits.shape
    if labels.shape[0] != batch:
        raise DimensionError(f"{labels.shape[0]} labels for batch of {batch}")
    if np.any(labels < 0) or np.any(labels >= classes):
        raise ValueError(f"labels must lie in [0, {classes}), got {labels.tolist()}")
    x = logits.data
    shift = x.max(axis=1, keepdims=True)
    lse = np.log(np.exp(x - shift).sum(axis=1, keepdims=True)) + shift
    rows = np.arange(batch)
    loss = float(np.mean(lse[:, 0] - x[rows, labels]))

    def backward(g):
        p = np.exp(x - lse)
        p[rows, labels] -= 1.0
        return (g * p / batch,)

    return _result(np.asarray(loss), (logits,), backward, "cross_entropy")


# ---- structural -----------------------------------------------------------
def concat(tensors: Sequence, axis: int = -1) -> Tensor:
    ts = [_wrap(t) for t in tensors]
    if not ts:
        raise DimensionError("concat needs at least one tensor")
    try:
        out = np.concatenate([t.data for t in ts], axis=axis)
    except ValueError as exc:
        raise DimensionError(
            f"concat: shapes {[t.shape for t in ts]} disagree off axis {axis}"
        ) from exc
    bounds = np.cumsum([t.shape[axis] for t in ts])[:-1]

    def backward(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _result(out, tuple(ts), backward, "concat")


def stack(tensors: Sequence, axis: int = 0) -> Tensor:
    ts = [_wrap(t) for t in tensors]
    try:
        out = np.stack([t.data for t in ts], axis=axis)
    except ValueError as exc:
        raise DimensionError(f"stack: shapes {[t.shape for t in ts]} differ") from exc

    def backward(g):
        return tuple(np.moveaxis(g, axis, 0))

    return _result(out, tuple(ts), backward, "stack")


def unstack(a, axis: int = 0) -> list[Tensor]:
    """Split along ``axis`` into views; cheaper than repeated indexing."""
    a = _wrap(a)
    n = a.shape[axis]
    parts = [np.take(a.data, i, axis=axis) for i in range(n)]
    if not a.requires_grad:
        return [Tensor(p) for p in parts]
    return [_unstack_piece(a, axis, i, p) for i, p in enumerate(parts)]


def _unstack_piece(source: Tensor, axis: int, i: int, data: np.ndarray) -> Tensor:
    def backward(g):
        full = np.zeros(source.shape)
        index = [slice(None)] * source.ndim
        index[axis] = i
        full[tuple(index)] = g
        return (full,)

    return _result(data, (source,), backward, "unstack")


def _is_basic_index(index) -> bool:
    items = index if isinstance(index, tuple) else (index,)
    return all(isinstance(i, (int, np.integer, slice)) or i is None or i is Ellipsis for i in items)


def getitem(a, index) -> Tensor:
    a = _wrap(a)
    out = a.data[index]
    basic = _is_basic_index(index)

    def backward(g):
        full = np.zeros(a.shape)
        if basic:
            full[index] = g
        else:
            np.add.at(full, index, g)
        return (full,)

    return _result(np.array(out), (a,), backward, "getitem")


def take(a, indices, axis: int) -> Tensor:
    """Gather along ``axis`` with an integer index array of any shape."""
    a = _wrap(a)
    indices = np.asarray(indices, dtype=np.int64)
    ax = axis % a.ndim
    out = np.take(a.data, indices, axis=ax)

    def backward(g):
        full = np.zeros(a.shape)
        # move the gathered axes to the front so add.at can scatter on axis 0
        g_front = np.moveaxis(g, tuple(range(ax, ax + indices.ndim)), tuple(range(indices.ndim)))
        full_front = np.moveaxis(full, ax, 0)
        np.add.at(full_front, indices, g_front)
        return (full,)

    return _result(out, (a,), backward, "take")
