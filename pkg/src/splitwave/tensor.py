"""Reverse-mode autodiff over dense float64 numpy arrays.

Deliberately small: only the operations needed to express the camera/base
station network stacks and their training. Every tensor is float64; gradients
are plain numpy arrays accumulated into ``Tensor.grad``.
"""

from __future__ import annotations

import contextlib

import numpy as np


class GradientError(RuntimeError):
    """Backward called in an invalid state (e.g. before any forward pass)."""


_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (used for evaluation)."""
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
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def detach(self) -> "Tensor":
        """A new leaf sharing this tensor's values (graph cut here)."""
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    # ---- graph construction -------------------------------------------------

    @staticmethod
    def _make(data, parents, backward) -> "Tensor":
        out = Tensor(data)
        if _grad_enabled and any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = tuple(parents)
            out._backward = backward
        return out

    def _accumulate(self, grad):
        if self.grad is None:
            self.grad = grad.copy() if isinstance(grad, np.ndarray) else np.asarray(grad, dtype=np.float64)
        else:
            self.grad += grad

    def backward(self, grad=None):
        """Backpropagate from this tensor.

        ``grad`` defaults to ones (a scalar loss seeds with 1.0). Accumulates
        into ``.grad`` of every reachable tensor with ``requires_grad``.
        """
        if not self.requires_grad:
            raise GradientError("backward() on a tensor with no recorded graph")
        if grad is None:
            grad = np.ones_like(self.data)
        else:
            grad = np.asarray(grad, dtype=np.float64)
            if grad.shape != self.data.shape:
                raise GradientError(
                    f"seed gradient shape {grad.shape} != tensor shape {self.data.shape}"
                )

        order = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))

        self._accumulate(grad)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # ---- arithmetic ---------------------------------------------------------

    def __add__(self, other):
        other = _as_tensor(other)
        out_data = self.data + other.data

        def bwd(g):
            if self.requires_grad:
                self._accumulate(_unbroadcast(g, self.data.shape))
            if other.requires_grad:
                other._accumulate(_unbroadcast(g, other.data.shape))

        return Tensor._make(out_data, (self, other), bwd)

    __radd__ = __add__

    def __sub__(self, other):
        other = _as_tensor(other)
        out_data = self.data - other.data

        def bwd(g):
            if self.requires_grad:
                self._accumulate(_unbroadcast(g, self.data.shape))
            if other.requires_grad:
                other._accumulate(_unbroadcast(-g, other.data.shape))

        return Tensor._make(out_data, (self, other), bwd)

    def __rsub__(self, other):
        return _as_tensor(other) - self

    def __mul__(self, other):
        other = _as_tensor(other)
        out_data = self.data * other.data

        def bwd(g):
            if self.requires_grad:
                self._accumulate(_unbroadcast(g * other.data, self.data.shape))
            if other.requires_grad:
                other._accumulate(_unbroadcast(g * self.data, other.data.shape))

        return Tensor._make(out_data, (self, other), bwd)

    __rmul__ = __mul__

    def __neg__(self):
        def bwd(g):
            self._accumulate(-g)

        return Tensor._make(-self.data, (self,), bwd)

    def __matmul__(self, other):
        other = _as_tensor(other)
        if self.data.ndim != 2 or other.data.ndim != 2:
            raise ValueError("matmul is defined for 2-D tensors only")
        out_data = self.data @ other.data

        def bwd(g):
            if self.requires_grad:
                self._accumulate(g @ other.data.T)
            if other.requires_grad:
                other._accumulate(self.data.T @ g)

        return Tensor._make(out_data, (self, other), bwd)

    # ---- shape ops ----------------------------------------------------------

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        old_shape = self.data.shape
        out_data = self.data.reshape(shape)

        def bwd(g):
            self._accumulate(g.reshape(old_shape))

        return Tensor._make(out_data, (self,), bwd)

    def transpose(self, axes):
        axes = tuple(axes)
        inv = tuple(np.argsort(axes))
        out_data = np.ascontiguousarray(self.data.transpose(axes))

        def bwd(g):
            self._accumulate(np.ascontiguousarray(g.transpose(inv)))

        return Tensor._make(out_data, (self,), bwd)

    def index(self, key):
        """Basic (slice/int) indexing with scatter-add backward."""
        out_data = np.ascontiguousarray(self.data[key])
        shape = self.data.shape

        def bwd(g):
            full = np.zeros(shape)
            full[key] = g
            self._accumulate(full)

        return Tensor._make(out_data, (self,), bwd)

    # ---- reductions ---------------------------------------------------------

    def sum(self, axis=None, keepdims: bool = False):
        out_data = self.data.sum(axis=axis, keepdims=keepdims)
        shape = self.data.shape

        def bwd(g):
            gg = g
            if axis is not None and not keepdims:
                gg = np.expand_dims(gg, axis)
            self._accumulate(np.broadcast_to(gg, shape).copy())

        return Tensor._make(out_data, (self,), bwd)

    def mean(self, axis=None, keepdims: bool = False):
        if axis is None:
            count = self.data.size
        else:
            ax = axis if isinstance(axis, tuple) else (axis,)
            count = int(np.prod([self.data.shape[a] for a in ax]))
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / count)

    # ---- nonlinearities -----------------------------------------------------

    def relu(self):
        out_data = np.maximum(self.data, 0.0)

        def bwd(g):
            self._accumulate(g * (self.data > 0.0))

        return Tensor._make(out_data, (self,), bwd)

    def sigmoid(self):
        out_data = _sigmoid(self.data)

        def bwd(g):
            self._accumulate(g * out_data * (1.0 - out_data))

        return Tensor._make(out_data, (self,), bwd)

    def tanh(self):
        out_data = np.tanh(self.data)

        def bwd(g):
            self._accumulate(g * (1.0 - out_data * out_data))

        return Tensor._make(out_data, (self,), bwd)


def _sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(grad, shape):
    """Reduce ``grad`` back to ``shape`` after numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def concat(tensors, axis: int = 0) -> Tensor:
    """Concatenate along ``axis`` with split backward."""
    tensors = [_as_tensor(t) for t in tensors]
    out_data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def bwd(g):
        for t, a, b in zip(tensors, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                idx = [slice(None)] * g.ndim
                idx[axis] = slice(a, b)
                t._accumulate(np.ascontiguousarray(g[tuple(idx)]))

    return Tensor._make(out_data, tuple(tensors), bwd)


def stack(tensors, axis: int = 0) -> Tensor:
    """Stack along a new axis (concat of expanded views)."""
    tensors = [_as_tensor(t) for t in tensors]
    out_data = np.stack([t.data for t in tensors], axis=axis)

    def bwd(g):
        for i, t in enumerate(tensors):
            if t.requires_grad:
                idx = [slice(None)] * g.ndim
                idx[axis] = i
                t._accumulate(np.ascontiguousarray(g[tuple(idx)]))

    return Tensor._make(out_data, tuple(tensors), bwd)


def check_finite(x, where: str = "") -> None:
    """Raise FloatingPointError if ``x`` holds any NaN/Inf.

    Single-pass check: the sum of an array is finite iff all entries are
    finite (any Inf/NaN survives summation; an overflowing sum of finite
    values signals numbers far beyond anything this engine produces).
    """
    data = x.data if isinstance(x, Tensor) else x
    if not np.isfinite(np.sum(data)):
        raise FloatingPointError(f"non-finite values in {where or 'tensor'}")
