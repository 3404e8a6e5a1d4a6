"""Taped tensors and the differentiable operations built on them.

A Tensor wraps a float64 numpy array. Operations compute their result
eagerly and, while gradients are enabled, record a closure that scatters the
output gradient back into the inputs. The implicit DAG formed by parent
links is the recorded computation graph for one forward pass; `backward`
replays it from a scalar loss in reverse topological order.

All shapes are explicit, there is no broadcasting beyond what the individual
operations document.
"""

from __future__ import annotations

import numpy as np
from scipy.special import expit as _sigmoid

_GRAD_ENABLED = True


class no_grad:
    """Context manager that disables tape recording (inference mode)."""

    def __enter__(self):
        global _GRAD_ENABLED
        self._prev = _GRAD_ENABLED
        _GRAD_ENABLED = False
        return self

    def __exit__(self, *exc):
        global _GRAD_ENABLED
        _GRAD_ENABLED = self._prev
        return False


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, _parents=(), _backward=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = _parents
        self._backward = _backward

    @property
    def shape(self):
        return self.data.shape

    def _ensure_grad(self) -> np.ndarray:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        return self.grad

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


class Parameter(Tensor):
    """A named trainable tensor; gradients accumulate until the optimizer
    consumes them."""

    __slots__ = ("name",)

    def __init__(self, data, name: str):
        super().__init__(data, requires_grad=True)
        self.name = name

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.data.shape})"


def constant(data) -> Tensor:
    """A tensor that never receives gradients (inputs, labels, masks)."""
    return Tensor(data)


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(x) into `.grad` of every tensor reachable from
    `loss`, walking the recorded graph once in reverse topological order.

    `loss` must be a recorded scalar: a single-element tensor that was
    produced by a taped operation.
    """
    if loss.data.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.data.shape}")
    if loss._backward is None and not loss._parents:
        raise ValueError("loss was not recorded on the tape (no gradient path)")
    topo: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in visited:
                stack.append((p, False))
    loss._ensure_grad()
    loss.grad += np.ones_like(loss.data)
    for node in reversed(topo):
        if node._backward is not None:
            node._backward()


def _out(data, parents, make_backward):
    """Create an op output; the backward closure is built only when needed."""
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out = Tensor(data, requires_grad=True, _parents=parents)
        out._backward = make_backward(out)
        return out
    return Tensor(data)


def _same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.data.shape != b.data.shape:
        raise ValueError(f"{op}: shape mismatch {a.data.shape} vs {b.data.shape}")


# ---------------------------------------------------------------------------
# linear algebra

def affine(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """x @ w.T + b for x: (N, p), w: (q, p), b: (q,) -> (N, q)."""
    if x.data.ndim != 2 or w.data.ndim != 2 or x.data.shape[1] != w.data.shape[1]:
        raise ValueError(f"affine: incompatible shapes x{x.data.shape} w{w.data.shape}")
    if b.data.shape != (w.data.shape[0],):
        raise ValueError(f"affine: bias shape {b.data.shape} does not match w{w.data.shape}")
    data = x.data @ w.data.T + b.data

    def make(out):
        def run():
            g = out.grad
            if x.requires_grad:
                x._ensure_grad()
                x.grad += g @ w.data
            if w.requires_grad:
                w._ensure_grad()
                w.grad += g.T @ x.data
            if b.requires_grad:
                b._ensure_grad()
                b.grad += g.sum(axis=0)

        return run

    return _out(data, (x, w, b), make)


def linear(x: Tensor, w: Tensor) -> Tensor:
    """x @ w.T without a bias term."""
    if x.data.ndim != 2 or w.data.ndim != 2 or x.data.shape[1] != w.data.shape[1]:
        raise ValueError(f"linear: incompatible shapes x{x.data.shape} w{w.data.shape}")
    data = x.data @ w.data.T

    def make(out):
        def run():
            g = out.grad
            if x.requires_grad:
                x._ensure_grad()
                x.grad += g @ w.data
            if w.requires_grad:
                w._ensure_grad()
                w.grad += g.T @ x.data

        return run

    return _out(data, (x, w), make)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Plain a @ b for 2-D tensors."""
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise ValueError(f"matmul: incompatible shapes {a.data.shape} @ {b.data.shape}")
    data = a.data @ b.data

    def make(out):
        def run():
            g = out.grad
            if a.requires_grad:
                a._ensure_grad()
                a.grad += g @ b.data.T
            if b.requires_grad:
                b._ensure_grad()
                b.grad += a.data.T @ g

        return run

    return _out(data, (a, b), make)


# ---------------------------------------------------------------------------
# elementwise

def add(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "add")

    def make(out):
        def run():
            g = out.grad
            if a.requires_grad:
                a._ensure_grad()
                a.grad += g
            if b.requires_grad:
                b._ensure_grad()
                b.grad += g

        return run

    return _out(a.data + b.data, (a, b), make)


def sub(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "sub")

    def make(out):
        def run():
            g = out.grad
            if a.requires_grad:
                a._ensure_grad()
                a.grad += g
            if b.requires_grad:
                b._ensure_grad()
                b.grad -= g

        return run

    return _out(a.data - b.data, (a, b), make)


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise product of same-shape tensors."""
    _same_shape(a, b, "mul")

    def make(out):
        def run():
            g = out.grad
            if a.requires_grad:
                a._ensure_grad()
                a.grad += g * b.data
            if b.requires_grad:
                b._ensure_grad()
                b.grad += g * a.data

        return run

    return _out(a.data * b.data, (a, b), make)


def neg(x: Tensor) -> Tensor:
    return scale(x, -1.0)


def scale(x: Tensor, c: float) -> Tensor:
    """Multiply by a python scalar constant."""
    c = float(c)

    def make(out):
        def run():
            if x.requires_grad:
                x._ensure_grad()
                x.grad += out.grad * c

        return run

    return _out(x.data * c, (x,), make)


def add_scalar(x: Tensor, c: float) -> Tensor:
    """Add a python scalar constant."""
    def make(out):
        def run():
            if x.requires_grad:
                x._ensure_grad()
                x.grad += out.grad

        return run

    return _out(x.data + float(c), (x,), make)


def relu(x: Tensor) -> Tensor:
    data = np.maximum(x.data, 0.0)

    def make(out):
        def run():
            if x.requires_grad:
                x._ensure_grad()
                x.grad += out.grad * (x.data > 0.0)

        return run

    return _out(data, (x,), make)


def tanh(x: Tensor) -> Tensor:
    data = np.tanh(x.data)

    def make(out):
        def run():
            if x.requires_grad:
                x._ensure_grad()
                x.grad += out.grad * (1.0 - out.data * out.data)

        return run

    return _out(data, (x,), make)


def sigmoid(x: Tensor) -> Tensor:
    data = _sigmoid(x.data)

    def make(out):
        def run():
            if x.requires_grad:
                x._ensure_grad()
                x.grad += out.grad * out.data * (1.0 - out.data)

        return run

    return _out(data, (x,), make)


def softmax_rows(x: Tensor) -> Tensor:
    """Row-wise softmax of a 2-D tensor, stabilized by max subtraction."""
    if x.data.ndim != 2:
        raise ValueError(f"softmax_rows expects a matrix, got shape {x.data.shape}")
    shifted = x.data - x.data.max(axis=1, keepdims=True)
    ex = np.exp(shifted)
    data = ex / ex.sum(axis=1, keepdims=True)

    def make(out):
        def run():
            if x.requires_grad:
                g = out.grad
                s = out.data
                x._ensure_grad()
                x.grad += s * (g - (g * s).sum(axis=1, keepdims=True))

        return run

    return _out(data, (x,), make)


def log(x: Tensor) -> Tensor:
    """Natural log; the caller is responsible for keeping inputs positive."""
    data = np.log(x.data)

    def make(out):
        def run():
            if x.requires_grad:
                x._ensure_grad()
                x.grad += out.grad / x.data

        return run

    return _out(data, (x,), make)


def clip(x: Tensor, lo: float, hi: float) -> Tensor:
    """Clamp to [lo, hi]; gradient flows only through un-clamped entries."""
    data = np.clip(x.data, lo, hi)

    def make(out):
        def run():
            if x.requires_grad:
                mask = (x.data > lo) & (x.data < hi)
                x._ensure_grad()
                x.grad += out.grad * mask

        return run

    return _out(data, (x,), make)


# ---------------------------------------------------------------------------
# structure

def concat_cols(parts: list[Tensor]) -> Tensor:
    """Concatenate matrices with equal row counts along columns."""
    rows = {p.data.shape[0] for p in parts}
    if len(rows) != 1:
        raise ValueError(f"concat_cols: row counts differ: {[p.data.shape for p in parts]}")
    widths = [p.data.shape[1] for p in parts]
    data = np.concatenate([p.data for p in parts], axis=1)

    def make(out):
        def run():
            g = out.grad
            j = 0
            for p, w in zip(parts, widths):
                if p.requires_grad:
                    p._ensure_grad()
                    p.grad += g[:, j : j + w]
                j += w

        return run

    return _out(data, tuple(parts), make)


def concat_rows(parts: list[Tensor]) -> Tensor:
    """Concatenate matrices with equal column counts along rows."""
    cols = {p.data.shape[1] for p in parts}
    if len(cols) != 1:
        raise ValueError(f"concat_rows: column counts differ: {[p.data.shape for p in parts]}")
    heights = [p.data.shape[0] for p in parts]
    data = np.concatenate([p.data for p in parts], axis=0)

    def make(out):
        def run():
            g = out.grad
            i = 0
            for p, h in zip(parts, heights):
                if p.requires_grad:
                    p._ensure_grad()
                    p.grad += g[i : i + h, :]
                i += h

        return run

    return _out(data, tuple(parts), make)


def slice_cols(x: Tensor, j0: int, j1: int) -> Tensor:
    data = x.data[:, j0:j1].copy()

    def make(out):
        def run():
            if x.requires_grad:
                x._ensure_grad()
                x.grad[:, j0:j1] += out.grad

        return run

    return _out(data, (x,), make)


def slice_rows(x: Tensor, i0: int, i1: int) -> Tensor:
    data = x.data[i0:i1, :].copy()

    def make(out):
        def run():
            if x.requires_grad:
                x._ensure_grad()
                x.grad[i0:i1, :] += out.grad

        return run

    return _out(data, (x,), make)


def reshape(x: Tensor, shape) -> Tensor:
    data = x.data.reshape(shape)

    def make(out):
        def run():
            if x.requires_grad:
                x._ensure_grad()
                x.grad += out.grad.reshape(x.data.shape)

        return run

    return _out(data, (x,), make)


def tile_vertical(x: Tensor, k: int) -> Tensor:
    """Stack k copies of a matrix vertically: (N, d) -> (k*N, d)."""
    n = x.data.shape[0]
    data = np.tile(x.data, (k, 1))

    def make(out):
        def run():
            if x.requires_grad:
                x._ensure_grad()
                x.grad += out.grad.reshape(k, n, -1).sum(axis=0)

        return run

    return _out(data, (x,), make)


def repeat_rows(x: Tensor, k: int) -> Tensor:
    """Repeat each row k times consecutively: (N, d) -> (k*N, d)."""
    n = x.data.shape[0]
    data = np.repeat(x.data, k, axis=0)

    def make(out):
        def run():
            if x.requires_grad:
                x._ensure_grad()
                x.grad += out.grad.reshape(n, k, -1).sum(axis=1)

        return run

    return _out(data, (x,), make)


def sum_all(x: Tensor) -> Tensor:
    data = np.array(x.data.sum())

    def make(out):
        def run():
            if x.requires_grad:
                x._ensure_grad()
                x.grad += out.grad  # broadcast scalar

        return run

    return _out(data, (x,), make)


def mean_all(x: Tensor) -> Tensor:
    n = x.data.size
    data = np.array(x.data.mean())

    def make(out):
        def run():
            if x.requires_grad:
                x._ensure_grad()
                x.grad += out.grad / n

        return run

    return _out(data, (x,), make)
