"""Reverse-mode automatic differentiation over float64 numpy arrays.

Deliberately small and explicit: every operation records its parent tensors
and a backward closure, and :meth:`Tensor.backward` replays those closures in
reverse topological order. Shapes follow numpy broadcasting; gradients of
broadcast operands are reduced back to the operand's shape. Evaluation is
single-threaded and order-fixed, so a frozen random stream yields
bit-identical forward values across runs.

Conventions used by every op:
  - data is always float64 (inputs are coerced on construction),
  - max-style reductions route gradient to the first (lowest-index) argmax,
  - kinked ops (relu, abs, clamp) use the standard subgradient at the kink.
"""
from __future__ import annotations

from contextlib import contextmanager

import numpy as np

_grad_enabled = True


@contextmanager
def no_grad():
    """Disable graph recording inside the context (forward values only)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def grad_enabled() -> bool:
    return _grad_enabled


class Tensor:
    """A float64 array plus an optional gradient slot and graph linkage."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad) and _grad_enabled
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward = None

    # -- construction helpers -------------------------------------------------

    @staticmethod
    def _make(data, parents, backward) -> "Tensor":
        out = Tensor(data)
        if _grad_enabled and any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = parents
            out._backward = backward
        return out

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ValueError(f"item() needs a single-element tensor, got shape {self.data.shape}")
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # -- backward pass ---------------------------------------------------------

    def backward(self, grad=None) -> None:
        """Accumulate d(self)/d(leaf) into .grad for every reachable tensor."""
        if grad is None:
            if self.data.size != 1:
                raise ValueError("backward() without an explicit gradient needs a scalar")
            grad = np.ones_like(self.data)
        else:
            grad = np.asarray(grad, dtype=np.float64)
            if grad.shape != self.data.shape:
                raise ValueError(f"gradient shape {grad.shape} != value shape {self.data.shape}")

        # iterative topological order (graphs get deep enough to bust recursion)
        topo: list[Tensor] = []
        visited: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in visited:
                    stack.append((p, False))

        grads: dict[int, np.ndarray] = {id(self): grad}
        for node in reversed(topo):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                # leaf: accumulate, torch-style, across backward calls
                node.grad = g if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg

    # -- operator sugar ---------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __pow__(self, exponent):
        return power(self, exponent)

    def __getitem__(self, key):
        return getitem(self, key)

    @property
    def T(self) -> "Tensor":
        return transpose(self)

    def reshape(self, *shape) -> "Tensor":
        return reshape(self, *shape)

    def sum(self, axis=None, keepdims=False) -> "Tensor":
        return reduce_sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False) -> "Tensor":
        return reduce_mean(self, axis=axis, keepdims=keepdims)

    def max(self, axis=None, keepdims=False) -> "Tensor":
        return reduce_max(self, axis=axis, keepdims=keepdims)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum `grad` over the axes that numpy broadcasting expanded."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


# -- elementwise arithmetic ------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return Tensor._make(
        a.data + b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)),
    )


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return Tensor._make(
        a.data - b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.data.shape), _unbroadcast(-g, b.data.shape)),
    )


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return Tensor._make(
        a.data * b.data,
        (a, b),
        lambda g: (
            _unbroadcast(g * b.data, a.data.shape),
            _unbroadcast(g * a.data, b.data.shape),
        ),
    )


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return Tensor._make(
        a.data / b.data,
        (a, b),
        lambda g: (
            _unbroadcast(g / b.data, a.data.shape),
            _unbroadcast(-g * a.data / (b.data**2), b.data.shape),
        ),
    )


def power(a, exponent: float) -> Tensor:
    a = as_tensor(a)
    e = float(exponent)
    return Tensor._make(
        a.data**e,
        (a,),
        lambda g: (g * e * a.data ** (e - 1.0),),
    )


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return Tensor._make(out, (a,), lambda g: (g * out,))


def log(a) -> Tensor:
    a = as_tensor(a)
    return Tensor._make(np.log(a.data), (a,), lambda g: (g / a.data,))


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    out = np.sqrt(a.data)
    return Tensor._make(out, (a,), lambda g: (g * 0.5 / out,))


def sin(a) -> Tensor:
    a = as_tensor(a)
    return Tensor._make(np.sin(a.data), (a,), lambda g: (g * np.cos(a.data),))


def cos(a) -> Tensor:
    a = as_tensor(a)
    return Tensor._make(np.cos(a.data), (a,), lambda g: (-g * np.sin(a.data),))


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.data)
    return Tensor._make(out, (a,), lambda g: (g * (1.0 - out**2),))


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    x = a.data
    out = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))), np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))
    return Tensor._make(out, (a,), lambda g: (g * out * (1.0 - out),))


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0
    return Tensor._make(np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,))


def absolute(a) -> Tensor:
    a = as_tensor(a)
    return Tensor._make(np.abs(a.data), (a,), lambda g: (g * np.sign(a.data),))


def clamp(a, lo: float | None = None, hi: float | None = None) -> Tensor:
    """Clip values into [lo, hi]; gradient 1 inside (inclusive), 0 outside."""
    a = as_tensor(a)
    out = np.clip(a.data, lo, hi)
    mask = np.ones_like(a.data, dtype=bool)
    if lo is not None:
        mask &= a.data >= lo
    if hi is not None:
        mask &= a.data <= hi
    return Tensor._make(out, (a,), lambda g: (g * mask,))


# -- linear algebra / shape -------------------------------------------------------


def matmul(a, b) -> Tensor:
    """2-D matmul, or batched matmul for equal leading (batch) dimensions."""
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim == 2 and b.data.ndim == 2:

        def backward(g):
            return (g @ b.data.T, a.data.T @ g)

        return Tensor._make(a.data @ b.data, (a, b), backward)
    if a.data.ndim == b.data.ndim and a.data.ndim >= 3 and a.data.shape[:-2] == b.data.shape[:-2]:

        def backward_nd(g):
            return (g @ b.data.swapaxes(-1, -2), a.data.swapaxes(-1, -2) @ g)

        return Tensor._make(a.data @ b.data, (a, b), backward_nd)
    raise ValueError(f"unsupported matmul shapes {a.data.shape} @ {b.data.shape}")


def transpose(a) -> Tensor:
    a = as_tensor(a)
    if a.data.ndim != 2:
        raise ValueError(f"transpose expects a 2-D tensor, got {a.data.shape}")
    return Tensor._make(a.data.T.copy(), (a,), lambda g: (g.T,))


def swap_axes(a, ax1: int, ax2: int) -> Tensor:
    a = as_tensor(a)
    out = np.ascontiguousarray(a.data.swapaxes(ax1, ax2))
    return Tensor._make(out, (a,), lambda g: (g.swapaxes(ax1, ax2),))


def reshape(a, *shape) -> Tensor:
    a = as_tensor(a)
    if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
        shape = tuple(shape[0])
    old = a.data.shape
    return Tensor._make(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),))


def getitem(a, key) -> Tensor:
    """Slice / integer-array indexing; backward scatter-adds into the source."""
    a = as_tensor(a)
    out = a.data[key]

    def backward(g):
        z = np.zeros_like(a.data)
        if _is_fancy(key):
            np.add.at(z, key, g)
        else:
            z[key] += g
        return (z,)

    return Tensor._make(np.array(out, copy=True), (a,), backward)


def _is_fancy(key) -> bool:
    items = key if isinstance(key, tuple) else (key,)
    return any(isinstance(k, (list, np.ndarray)) for k in items)


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.data.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, splits, axis=axis))

    return Tensor._make(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), backward)


# -- reductions --------------------------------------------------------------------


def reduce_sum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        gg = g
        if axis is not None and not keepdims:
            gg = np.expand_dims(g, axis)
        return (np.broadcast_to(gg, a.data.shape).copy(),)

    return Tensor._make(out, (a,), backward)


def reduce_mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    count = a.data.size if axis is None else a.data.shape[axis]
    return reduce_sum(a, axis=axis, keepdims=keepdims) * (1.0 / count)


def reduce_max(a, axis=None, keepdims: bool = False) -> Tensor:
    """Max reduction; gradient routes only to the first argmax (lowest index)."""
    a = as_tensor(a)
    if axis is None:
        flat = a.data.reshape(-1)
        pos = int(np.argmax(flat))
        out = flat[pos]

        def backward_all(g):
            z = np.zeros_like(flat)
            z[pos] = float(g)
            return (z.reshape(a.data.shape),)

        return Tensor._make(np.array(out), (a,), backward_all)

    idx = np.argmax(a.data, axis=axis)  # first occurrence on ties
    out = np.take_along_axis(a.data, np.expand_dims(idx, axis), axis=axis)
    if not keepdims:
        out = np.squeeze(out, axis=axis)

    def backward(g):
        gg = g if keepdims else np.expand_dims(g, axis)
        z = np.zeros_like(a.data)
        np.put_along_axis(z, np.expand_dims(idx, axis), gg, axis=axis)
        return (z,)

    return Tensor._make(out, (a,), backward)


def softmax(a, axis: int = -1) -> Tensor:
    """Numerically stable softmax along `axis`; rows sum to 1."""
    a = as_tensor(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        dot = (g * out).sum(axis=axis, keepdims=True)
        return (out * (g - dot),)

    return Tensor._make(out, (a,), backward)


def straight_through(soft: Tensor, hard_values: np.ndarray) -> Tensor:
    """Emit `hard_values` in the forward pass, gradient of identity to `soft`."""
    soft = as_tensor(soft)
    hard = np.asarray(hard_values, dtype=np.float64)
    if hard.shape != soft.data.shape:
        raise ValueError(f"hard shape {hard.shape} != soft shape {soft.data.shape}")
    return Tensor._make(hard.copy(), (soft,), lambda g: (g,))
