"""Dense float64 tensors with a reverse-mode gradient tape.

Every operation on tensors that require gradients records its inputs and a
local backward rule.  ``backward`` walks the recorded graph in reverse
topological order exactly once, accumulates gradients into leaf tensors and
then releases the graph.  A second ``backward`` on the same loss raises.

Gradient policy: leaf gradients accumulate across independent graphs until
``zero_grad`` (or an optimizer step) resets them.
"""

from __future__ import annotations

import contextlib

import numpy as np
from scipy.special import expit

from ..errors import ContractError

PROB_FLOOR = 1e-12

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (inference only)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward", "_consumed")

    def __init__(self, data, requires_grad=False, name=None):
        self.data = np.array(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = np.zeros_like(self.data) if requires_grad else None
        self.name = name
        self._parents = ()
        self._backward = None
        self._consumed = False

    # ------------------------------------------------------------------ basics
    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def T(self):
        return transpose(self)

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else _not_scalar(self)

    def zero_grad(self):
        if self.requires_grad:
            self.grad = np.zeros_like(self.data)

    def backward(self):
        backward(self)

    def __repr__(self):
        tag = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{tag})"

    # -------------------------------------------------------------- operators
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

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        return transpose(self, axes or None)

    def tanh(self):
        return tanh(self)

    def sigmoid(self):
        return sigmoid(self)

    def relu(self):
        return relu(self)

    def exp(self):
        return exp(self)

    def log(self):
        return log(self)


def _not_scalar(t):
    raise ContractError(f"item() requires a single-element tensor, got shape {t.shape}")


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _result(data, parents, backward_fn):
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.name = None
    out._consumed = False
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward_fn
    else:
        out.requires_grad = False
        out._parents = ()
        out._backward = None
    return out


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# --------------------------------------------------------------------- engine
def _topological_order(root):
    order = []
    visited = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in visited:
                stack.append((parent, False))
    return order


def backward(loss):
    """Populate ``grad`` on every leaf reachable from the scalar ``loss``."""
    if not isinstance(loss, Tensor):
        raise ContractError("backward expects a Tensor")
    if loss.data.size != 1:
        raise ContractError(f"backward requires a scalar loss, got shape {loss.shape}")
    if loss._consumed:
        raise ContractError("backward already ran on this graph; rebuild the forward pass")
    loss._consumed = True
    if not loss.requires_grad:
        return
    order = _topological_order(loss)
    grads = {id(loss): np.ones_like(loss.data)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            if node.grad is None:
                node.grad = np.zeros_like(node.data)
            node.grad += g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            prev = grads.get(key)
            grads[key] = pg if prev is None else prev + pg
    for node in order:
        if node._backward is not None:
            node._parents = ()
            node._backward = None
            node._consumed = True


# ---------------------------------------------------------- elementwise ops
def add(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def back(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _result(a.data + b.data, (a, b), back)


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def back(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _result(a.data - b.data, (a, b), back)


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    A, B = a.data, b.data

    def back(g):
        ga = _unbroadcast(g * B, A.shape) if a.requires_grad else None
        gb = _unbroadcast(g * A, B.shape) if b.requires_grad else None
        return ga, gb

    return _result(A * B, (a, b), back)


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    A, B = a.data, b.data
    out = A / B

    def back(g):
        ga = _unbroadcast(g / B, A.shape) if a.requires_grad else None
        gb = _unbroadcast(-g * out / B, B.shape) if b.requires_grad else None
        return ga, gb

    return _result(out, (a, b), back)


def neg(a):
    a = as_tensor(a)
    return _result(-a.data, (a,), lambda g: (-g,))


def tanh(a):
    a = as_tensor(a)
    out = np.tanh(a.data)
    return _result(out, (a,), lambda g: (g * (1.0 - out * out),))


def sigmoid(a):
    a = as_tensor(a)
    out = expit(a.data)
    return _result(out, (a,), lambda g: (g * out * (1.0 - out),))


def relu(a):
    a = as_tensor(a)
    pos = a.data > 0
    return _result(np.where(pos, a.data, 0.0), (a,), lambda g: (np.where(pos, g, 0.0),))


def exp(a):
    a = as_tensor(a)
    out = np.exp(a.data)
    return _result(out, (a,), lambda g: (g * out,))


def log(a):
    a = as_tensor(a)
    if np.any(a.data <= 0):
        raise ContractError("log of a non-positive value")
    A = a.data
    return _result(np.log(A), (a,), lambda g: (g / A,))


# ------------------------------------------------------------- linear algebra
def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    A, B = a.data, b.data
    if A.ndim == 0 or B.ndim == 0:
        raise ContractError("matmul needs operands of rank >= 1")
    try:
        out = np.matmul(A, B)
    except ValueError as exc:
        raise ContractError(f"matmul shape mismatch {A.shape} @ {B.shape}") from exc

    def back(g):
        A2 = A if A.ndim > 1 else A[None, :]
        B2 = B if B.ndim > 1 else B[:, None]
        if A.ndim == 1 and B.ndim == 1:
            g2 = np.reshape(g, (1, 1))
        elif A.ndim == 1:
            g2 = np.expand_dims(g, -2)
        elif B.ndim == 1:
            g2 = np.expand_dims(g, -1)
        else:
            g2 = g
        ga = gb = None
        if a.requires_grad:
            ga = _unbroadcast(np.matmul(g2, np.swapaxes(B2, -1, -2)), A2.shape).reshape(A.shape)
        if b.requires_grad:
            gb = _unbroadcast(np.matmul(np.swapaxes(A2, -1, -2), g2), B2.shape).reshape(B.shape)
        return ga, gb

    return _result(out, (a, b), back)


# --------------------------------------------------------- shape & reduction
def tsum(a, axis=None, keepdims=False):
    a = as_tensor(a)
    shape = a.shape

    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape),)

    return _result(np.sum(a.data, axis=axis, keepdims=keepdims), (a,), back)


def mean(a, axis=None, keepdims=False):
    a = as_tensor(a)
    if a.size == 0:
        raise ContractError("mean of an empty tensor")
    n = a.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return tsum(a, axis, keepdims) * (1.0 / float(n))


def reshape(a, shape):
    a = as_tensor(a)
    old = a.shape
    return _result(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),))


def transpose(a, axes=None):
    a = as_tensor(a)
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    inverse = tuple(np.argsort(axes))
    return _result(np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inverse),))


def getitem(a, index):
    a = as_tensor(a)
    shape = a.shape

    def back(g):
        full = np.zeros(shape)
        if _is_advanced(index):
            np.add.at(full, index, g)
        else:
            full[index] = g
        return (full,)

    return _result(a.data[index], (a,), back)


def _is_advanced(index):
    items = index if isinstance(index, tuple) else (index,)
    return any(isinstance(i, (list, np.ndarray)) for i in items)


def take(a, indices):
    """Gather along axis 0 (rows may repeat)."""
    a = as_tensor(a)
    idx = np.asarray(indices, dtype=np.intp)
    shape = a.shape

    def back(g):
        full = np.zeros(shape)
        np.add.at(full, idx, g)
        return (full,)

    return _result(a.data[idx], (a,), back)


def concat(tensors, axis=-1):
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise ContractError("concat of an empty list")
    ax = axis % tensors[0].ndim
    sizes = [t.shape[ax] for t in tensors]
    bounds = np.cumsum([0] + sizes)
    try:
        out = np.concatenate([t.data for t in tensors], axis=ax)
    except ValueError as exc:
        raise ContractError(f"concat shape mismatch: {[t.shape for t in tensors]}") from exc

    def back(g):
        return tuple(
            np.take(g, np.arange(bounds[i], bounds[i + 1]), axis=ax) if t.requires_grad else None
            for i, t in enumerate(tensors)
        )

    return _result(out, tuple(tensors), back)


def stack(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise ContractError("stack of an empty list")
    out = np.stack([t.data for t in tensors], axis=axis)

    def back(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(tensors)))

    return _result(out, tuple(tensors), back)


# ------------------------------------------------------ probabilistic layers
def softmax(x, axis=-1, mask=None):
    """Numerically stable softmax; masked positions get exactly zero weight."""
    x = as_tensor(x)
    X = x.data
    if X.ndim == 0 or X.size == 0 or X.shape[axis] == 0:
        raise ContractError("softmax of an empty input")
    if not np.all(np.isfinite(X)):
        raise ContractError("softmax input contains non-finite values")
    if mask is None:
        e = np.exp(X - X.max(axis=axis, keepdims=True))
    else:
        m = np.broadcast_to(np.asarray(mask, dtype=bool), X.shape)
        if not np.all(m.any(axis=axis)):
            raise ContractError("softmax slice with every position masked")
        z = np.where(m, X, -np.inf)
        e = np.where(m, np.exp(z - z.max(axis=axis, keepdims=True)), 0.0)
    out = e / e.sum(axis=axis, keepdims=True)

    def back(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return _result(out, (x,), back)


def _class_indices(target, n_classes):
    t = np.asarray(target)
    if t.ndim >= 1 and t.shape[-1] == n_classes and t.dtype.kind == "f":
        if not np.all((t == 0) | (t == 1)) or not np.all(t.sum(axis=-1) == 1):
            raise ContractError("target must be one-hot")
        return np.argmax(t, axis=-1)
    t = t.astype(np.intp)
    if np.any(t < 0) or np.any(t >= n_classes):
        raise ContractError("class index out of range")
    return t


def cross_entropy(predicted, target):
    """Mean categorical cross-entropy of probability rows against class targets.

    ``target`` is either integer class indices or one-hot rows.  Probabilities
    are floored at ``PROB_FLOOR`` inside the log.
    """
    predicted = as_tensor(predicted)
    P = predicted.data
    squeeze = P.ndim == 1
    P2 = P[None, :] if squeeze else P
    if P2.ndim != 2:
        raise ContractError("cross_entropy expects a probability vector or matrix")
    n, c = P2.shape
    tgt = np.asarray(target)
    if tgt.dtype.kind == "f" and tgt.shape[-1] != c:
        raise ContractError(f"target dimension {tgt.shape[-1]} != {c} classes")
    idx = np.atleast_1d(_class_indices(tgt, c))
    if idx.shape[0] != n:
        raise ContractError(f"{idx.shape[0]} targets for {n} predictions")
    if np.any(np.abs(P2.sum(axis=1) - 1.0) > 1e-6):
        raise ContractError("predicted rows must sum to 1")
    rows = np.arange(n)
    p = P2[rows, idx]
    loss = -np.mean(np.log(np.maximum(p, PROB_FLOOR)))

    def back(g):
        gp = np.zeros_like(P2)
        gp[rows, idx] = np.where(p > PROB_FLOOR, -1.0 / (n * p), 0.0) * g
        return (gp.reshape(P.shape),)

    return _result(np.asarray(loss), (predicted,), back)


def mse(predicted, target):
    predicted = as_tensor(predicted)
    t = np.asarray(target, dtype=np.float64)
    if t.shape != predicted.shape:
        raise ContractError(f"mse shape mismatch {predicted.shape} vs {t.shape}")
    diff = predicted.data - t
    n = diff.size

    return _result(np.asarray(np.mean(diff * diff)), (predicted,), lambda g: (g * 2.0 * diff / n,))
