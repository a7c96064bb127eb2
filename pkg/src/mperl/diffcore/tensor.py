"""Dense float64 tensors with a reverse-mode gradient tape.

Every tensor produced by a primitive records its parents and an adjoint
function. Nodes carry a creation sequence number; ``backward`` replays the
adjoints of all reachable nodes in decreasing sequence order, which is the
reverse of execution order.

Gradients of intermediate nodes live only for the duration of one backward
pass. Leaf tensors (``requires_grad`` and no parents) accumulate into
``.grad``, so two backward passes without ``zero_grad`` give twice the
gradient.
"""

import itertools

import numpy as np

from .. import kernels
from ..errors import ContractError, DimensionError, DomainError
from . import special

_seq = itertools.count()


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_adjoint", "_seq", "name")

    def __init__(self, data, requires_grad=False, name=None):
        self.data = np.array(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = ()
        self._adjoint = None
        self._seq = next(_seq)
        self.name = name

    # -- basic properties -------------------------------------------------
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
    def is_leaf(self):
        return not self._parents

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else self.data.item()

    def detach(self):
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    def backward(self):
        return backward(self)

    # -- operator sugar ----------------------------------------------------
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
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return take_rows(self, index)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    @property
    def T(self):
        return transpose(self)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, parents, adjoint):
    out = Tensor(data)
    live = tuple(p for p in parents if p.requires_grad)
    if live:
        out.requires_grad = True
        out._parents = tuple(parents)
        out._adjoint = adjoint
    return out


def _unbroadcast(grad, shape):
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _check_broadcast(a, b, op):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"{op}: shapes {a.shape} and {b.shape} do not broadcast") from None


# -- backward ----------------------------------------------------------------
def backward(loss):
    """Accumulate d(loss)/d(leaf) into every reachable leaf's ``.grad``.

    Returns a dict mapping each reached leaf tensor to the gradient
    contributed by this pass.
    """
    if not isinstance(loss, Tensor) or loss.size != 1:
        raise ContractError("backward requires a scalar loss tensor")
    if not loss.requires_grad:
        raise ContractError("loss is not connected to any tensor that requires grad")

    nodes = {}
    stack = [loss]
    while stack:
        node = stack.pop()
        if id(node) in nodes:
            continue
        nodes[id(node)] = node
        stack.extend(p for p in node._parents if p.requires_grad)

    grads = {id(loss): np.ones_like(loss.data)}
    contributed = {}
    for node in sorted(nodes.values(), key=lambda t: t._seq, reverse=True):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.is_leaf:
            contributed[node] = g
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node._parents, node._adjoint(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            grads[key] = pg if key not in grads else grads[key] + pg
    return contributed


# -- elementwise arithmetic --------------------------------------------------
def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "add")
    return _make(a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "sub")
    return _make(a.data - b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "mul")
    return _make(a.data * b.data, (a, b),
                 lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)))


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "div")
    out = a.data / b.data
    return _make(out, (a, b),
                 lambda g: (_unbroadcast(g / b.data, a.shape), _unbroadcast(-g * out / b.data, b.shape)))


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    return _make(a.data @ b.data, (a, b), lambda g: (g @ b.data.T, a.data.T @ g))


# -- nonlinearities ----------------------------------------------------------
def relu(x):
    x = as_tensor(x)
    mask = x.data > 0
    return _make(np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,))


def sigmoid(x):
    x = as_tensor(x)
    # split by sign so exp never overflows
    z = np.exp(-np.abs(x.data))
    out = np.where(x.data >= 0, 1.0 / (1.0 + z), z / (1.0 + z))
    return _make(out, (x,), lambda g: (g * out * (1.0 - out),))


def log(x):
    x = as_tensor(x)
    if np.any(~(x.data > 0)):
        raise DomainError("log of a non-positive value")
    return _make(np.log(x.data), (x,), lambda g: (g / x.data,))


def exp(x):
    x = as_tensor(x)
    out = np.exp(x.data)
    return _make(out, (x,), lambda g: (g * out,))


def lgamma(x):
    x = as_tensor(x)
    return _make(special.lgamma(x.data), (x,), lambda g: (g * special.digamma(x.data),))


def digamma(x):
    x = as_tensor(x)
    return _make(special.digamma(x.data), (x,), lambda g: (g * special.trigamma(x.data),))


def clamp(x, low, high):
    """Clip to [low, high]; the gradient is zero where clipping is active."""
    x = as_tensor(x)
    inside = (x.data >= low) & (x.data <= high)
    return _make(np.clip(x.data, low, high), (x,), lambda g: (g * inside,))


def softmax(x, axis=-1):
    x = as_tensor(x)
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def adjoint(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return _make(out, (x,), adjoint)


def log_softmax(x, axis=-1):
    x = as_tensor(x)
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out = shifted - lse
    probs = np.exp(out)
    return _make(out, (x,), lambda g: (g - probs * g.sum(axis=axis, keepdims=True),))


# -- reductions and shape ----------------------------------------------------
def sum_(x, axis=None, keepdims=False):
    x = as_tensor(x)
    out = x.data.sum(axis=axis, keepdims=keepdims)

    def adjoint(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return _make(out, (x,), adjoint)


def mean(x, axis=None, keepdims=False):
    x = as_tensor(x)
    count = x.size if axis is None else np.prod([x.shape[a] for a in np.atleast_1d(axis)])
    return mul(sum_(x, axis=axis, keepdims=keepdims), 1.0 / count)


def reshape(x, shape):
    x = as_tensor(x)
    try:
        out = x.data.reshape(shape)
    except ValueError:
        raise DimensionError(f"reshape: cannot view {x.shape} as {shape}") from None
    return _make(out, (x,), lambda g: (g.reshape(x.shape),))


def transpose(x, axes=None):
    x = as_tensor(x)
    out = np.transpose(x.data, axes)
    inverse = None if axes is None else np.argsort(axes)
    return _make(out, (x,), lambda g: (np.transpose(g, inverse),))


def concat(tensors, axis=-1):
    tensors = [as_tensor(t) for t in tensors]
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as exc:
        raise DimensionError(f"concat: {exc}") from None
    splits = np.cumsum([t.shape[axis] for t in tensors])[:-1]
    return _make(out, tensors, lambda g: tuple(np.split(g, splits, axis=axis)))


def take_rows(x, index):
    """Select rows (first-axis entries) by an integer index array."""
    x = as_tensor(x)
    index = np.asarray(index)
    out = x.data[index]

    def adjoint(g):
        full = np.zeros_like(x.data)
        np.add.at(full, index, g)
        return (full,)

    return _make(out, (x,), adjoint)


def ones_like(x):
    return Tensor(np.ones_like(as_tensor(x).data))


# -- relational edge primitives ---------------------------------------------
def _edge_arrays(edges):
    src, dst, rel, w = edges
    return (np.ascontiguousarray(src, dtype=np.int64), np.ascontiguousarray(dst, dtype=np.int64),
            np.ascontiguousarray(rel, dtype=np.int64), np.ascontiguousarray(w, dtype=np.float64))


def relational_contract(table, coef, edges, n_out):
    """Transform-then-aggregate basis messages.

    ``out[i] = sum over edges (j -> i, r) of w * sum_b coef[r, b] * table[j, b]``
    with ``table`` of shape (m, B, d) and ``coef`` of shape (R, B).
    """
    table, coef = as_tensor(table), as_tensor(coef)
    if table.ndim != 3 or coef.ndim != 2 or table.shape[1] != coef.shape[1]:
        raise DimensionError(f"relational_contract: table {table.shape} vs coef {coef.shape}")
    src, dst, rel, w = _edge_arrays(edges)
    t = np.ascontiguousarray(table.data)
    c = np.ascontiguousarray(coef.data)
    out = kernels.contract(t, c, src, dst, rel, w, n_out)

    def adjoint(g):
        g = np.ascontiguousarray(g)
        gt = kernels.expand(g, c, dst, src, rel, w, table.shape[0]) if table.requires_grad else None
        gc = kernels.coef_grad(t, g, src, dst, rel, w, coef.shape[0]) if coef.requires_grad else None
        return gt, gc

    return _make(out, (table, coef), adjoint)


def relational_expand(x, coef, edges, n_out):
    """Aggregate-then-transform basis messages.

    ``out[i, b] = sum over edges (j -> i, r) of w * coef[r, b] * x[j]``
    with ``x`` of shape (m, d); the result has shape (n_out, B, d).
    """
    x, coef = as_tensor(x), as_tensor(coef)
    if x.ndim != 2 or coef.ndim != 2:
        raise DimensionError(f"relational_expand: x {x.shape} vs coef {coef.shape}")
    src, dst, rel, w = _edge_arrays(edges)
    xd = np.ascontiguousarray(x.data)
    c = np.ascontiguousarray(coef.data)
    out = kernels.expand(xd, c, src, dst, rel, w, n_out)

    def adjoint(g):
        g = np.ascontiguousarray(g)
        gx = kernels.contract(g, c, dst, src, rel, w, x.shape[0]) if x.requires_grad else None
        gc = kernels.coef_grad(g, xd, dst, src, rel, w, coef.shape[0]) if coef.requires_grad else None
        return gx, gc

    return _make(out, (x, coef), adjoint)
