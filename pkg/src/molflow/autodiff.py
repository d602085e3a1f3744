"""Minimal reverse-mode differentiation over numpy arrays.

Every op accepts either plain arrays or :class:`Node` objects. When none of the
inputs is a node the op simply returns a numpy array, so the same model code
serves both pure evaluation and gradient computation.

    tape = Tape()
    w = tape.leaf(np.ones(3))
    loss = ad.sum(ad.square(w))
    (gw,) = grad(tape, loss, [w])
"""
from __future__ import annotations

import numpy as np


class Tape:
    """Append-only record of nodes in creation (topological) order."""

    def __init__(self):
        self.nodes: list[Node] = []
        self.watched = None

    def __len__(self):
        return len(self.nodes)

    def leaf(self, value, name=None) -> "Node":
        return Node(np.asarray(value, dtype=np.float64), self, None, name)

    def watch(self, params) -> dict:
        """Register a ParamVector; returns one leaf node per named slice."""
        if self.watched is not None:
            raise ValueError("tape already watches a parameter vector")
        leaves = {name: self.leaf(params[name], name) for name in params.names}
        self.watched = (params, leaves)
        return leaves


class Node:
    __slots__ = ("value", "tape", "index", "parents", "name")
    __array_priority__ = 100.0

    def __init__(self, value, tape, parents, name=None):
        self.value = value
        self.tape = tape
        self.parents = parents
        self.name = name
        self.index = len(tape.nodes)
        tape.nodes.append(self)

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    def __repr__(self):
        label = f" {self.name!r}" if self.name else ""
        return f"<Node{label} #{self.index} shape={self.shape}>"

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

    def __getitem__(self, idx):
        return getitem(self, idx)

    def sum(self, axis=None, keepdims=False):
        return sum(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], tuple):
            shape = shape[0]
        return reshape(self, shape)


def value(x):
    return x.value if isinstance(x, Node) else x


def _record(out, pairs):
    """Wrap ``out`` in a node if any input in ``pairs`` is a node."""
    parents = [(p, vjp) for p, vjp in pairs if isinstance(p, Node)]
    if not parents:
        return out
    tape = parents[0][0].tape
    for p, _ in parents[1:]:
        if p.tape is not tape:
            raise ValueError("inputs recorded on different tapes")
    return Node(np.asarray(out, dtype=np.float64), tape, parents)


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# --- elementwise ----------------------------------------------------------

def add(a, b):
    av, bv = value(a), value(b)
    sa, sb = np.shape(av), np.shape(bv)
    return _record(av + bv, [(a, lambda g: _unbroadcast(g, sa)),
                             (b, lambda g: _unbroadcast(g, sb))])


def sub(a, b):
    av, bv = value(a), value(b)
    sa, sb = np.shape(av), np.shape(bv)
    return _record(av - bv, [(a, lambda g: _unbroadcast(g, sa)),
                             (b, lambda g: -_unbroadcast(g, sb))])


def mul(a, b):
    av, bv = value(a), value(b)
    sa, sb = np.shape(av), np.shape(bv)
    return _record(av * bv, [(a, lambda g: _unbroadcast(g * bv, sa)),
                             (b, lambda g: _unbroadcast(g * av, sb))])


def div(a, b):
    av, bv = value(a), value(b)
    sa, sb = np.shape(av), np.shape(bv)
    out = av / bv
    return _record(out, [(a, lambda g: _unbroadcast(g / bv, sa)),
                         (b, lambda g: _unbroadcast(-g * out / bv, sb))])


def neg(a):
    return _record(-value(a), [(a, lambda g: -g)])


def square(a):
    av = value(a)
    return _record(av * av, [(a, lambda g: 2.0 * g * av)])


def exp(a):
    out = np.exp(value(a))
    return _record(out, [(a, lambda g: g * out)])


def log(a):
    av = value(a)
    return _record(np.log(av), [(a, lambda g: g / av)])


def tanh(a):
    out = np.tanh(value(a))
    return _record(out, [(a, lambda g: g * (1.0 - out * out))])


def _sigmoid(x):
    return np.exp(-np.logaddexp(0.0, -x))


def sigmoid(a):
    out = _sigmoid(value(a))
    return _record(out, [(a, lambda g: g * out * (1.0 - out))])


def softplus(a):
    av = value(a)
    return _record(np.logaddexp(0.0, av), [(a, lambda g: g * _sigmoid(av))])


def log_sigmoid(a):
    """ln sigma(a), finite for every finite input."""
    av = value(a)
    return _record(-np.logaddexp(0.0, -av), [(a, lambda g: g * _sigmoid(-av))])


def clip_min(a, floor):
    av = value(a)
    keep = av > floor
    return _record(np.where(keep, av, floor), [(a, lambda g: g * keep)])


def magnitude(re, im):
    """sqrt(re**2 + im**2) with a zero subgradient at the origin."""
    rv, iv = value(re), value(im)
    out = np.hypot(rv, iv)
    safe = np.where(out > 0.0, out, 1.0)
    return _record(out, [(re, lambda g: g * rv / safe * (out > 0.0)),
                         (im, lambda g: g * iv / safe * (out > 0.0))])


# --- reductions -----------------------------------------------------------

def _expand(g, shape, axis, keepdims):
    if axis is None:
        return np.broadcast_to(g, shape)
    if not keepdims:
        g = np.expand_dims(g, axis)
    return np.broadcast_to(g, shape)


def sum(a, axis=None, keepdims=False):  # noqa: A001 - mirrors numpy
    av = value(a)
    shape = np.shape(av)
    return _record(np.sum(av, axis=axis, keepdims=keepdims),
                   [(a, lambda g: _expand(g, shape, axis, keepdims))])


def mean(a, axis=None, keepdims=False):
    av = value(a)
    n = av.size if axis is None else np.prod([av.shape[i] for i in np.atleast_1d(axis)])
    return mul(sum(a, axis, keepdims), 1.0 / n)


def logsumexp(a, axis=-1, keepdims=False):
    av = value(a)
    m = np.max(av, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    with np.errstate(divide="ignore"):
        lse = m + np.log(np.sum(np.exp(av - m), axis=axis, keepdims=True))
    out = lse if keepdims else np.squeeze(lse, axis=axis)

    def vjp(g):
        if not keepdims:
            g = np.expand_dims(g, axis)
        return g * np.exp(av - lse)

    return _record(out, [(a, vjp)])


def log_softmax(a, axis=-1):
    av = value(a)
    m = np.max(av, axis=axis, keepdims=True)
    out = av - (m + np.log(np.sum(np.exp(av - m), axis=axis, keepdims=True)))

    def vjp(g):
        return g - np.exp(out) * np.sum(g, axis=axis, keepdims=True)

    return _record(out, [(a, vjp)])


# --- shape / linear -------------------------------------------------------

def matmul(a, b):
    """``a @ b`` where ``b`` is a 2-D matrix and ``a`` has any leading dims."""
    av, bv = value(a), value(b)
    if np.ndim(bv) != 2:
        raise ValueError("matmul expects a 2-D right operand")
    k, m = bv.shape

    def vjp_a(g):
        return g @ bv.T

    def vjp_b(g):
        return av.reshape(-1, k).T @ g.reshape(-1, m)

    return _record(av @ bv, [(a, vjp_a), (b, vjp_b)])


def reshape(a, shape):
    av = np.asarray(value(a), dtype=np.float64)
    old = av.shape
    return _record(av.reshape(shape), [(a, lambda g: g.reshape(old))])


def _is_basic_index(idx):
    items = idx if isinstance(idx, tuple) else (idx,)
    return all(isinstance(i, (slice, int, np.integer)) or i is Ellipsis or i is None
               for i in items)


def getitem(a, idx):
    av = value(a)
    shape = av.shape
    basic = _is_basic_index(idx)

    def vjp(g):
        out = np.zeros(shape)
        if basic:
            out[idx] += g
        else:
            np.add.at(out, idx, g)
        return out

    return _record(av[idx], [(a, vjp)])


def concat(items, axis=-1):
    vals = [value(x) for x in items]
    out = np.concatenate(vals, axis=axis)
    bounds = np.cumsum([v.shape[axis] for v in vals])[:-1]

    def make(i):
        def vjp(g):
            return np.split(g, bounds, axis=axis)[i]
        return vjp

    return _record(out, [(x, make(i)) for i, x in enumerate(items)])


def delay(a, n, axis=1):
    """Shift ``a`` forward in time by ``n`` steps, zero-filling the start."""
    av = value(a)
    if n == 0:
        return a
    length = av.shape[axis]
    out = np.zeros_like(av)
    dst = [slice(None)] * av.ndim
    src = [slice(None)] * av.ndim
    dst[axis] = slice(min(n, length), None)
    src[axis] = slice(None, max(length - n, 0))
    out[tuple(dst)] = av[tuple(src)]

    def vjp(g):
        back = np.zeros_like(g)
        back[tuple(src)] = g[tuple(dst)]
        return back

    return _record(out, [(a, vjp)])


def frames(a, size, hop):
    """Overlapping frames along the last axis: (..., L) -> (..., F, size)."""
    av = value(a)
    length = av.shape[-1]
    count = 1 + (length - size) // hop
    starts = np.arange(count) * hop
    idx = starts[:, None] + np.arange(size)[None, :]
    out = av[..., idx]

    def vjp(g):
        back = np.zeros(av.shape)
        for f, s in enumerate(starts):
            back[..., s:s + size] += g[..., f, :]
        return back

    return _record(out, [(a, vjp)])


# --- backward pass --------------------------------------------------------

def grad(tape, loss, wrt):
    """Gradients of scalar ``loss`` with respect to each node in ``wrt``."""
    if not isinstance(loss, Node) or loss.tape is not tape \
            or loss.index >= len(tape.nodes) or tape.nodes[loss.index] is not loss:
        raise ValueError("loss is not recorded on this tape")
    if loss.value.size != 1:
        raise ValueError(f"loss must be scalar, got shape {loss.shape}")
    wanted = {n.index for n in wrt}
    grads = {loss.index: np.ones_like(loss.value)}
    found = {}
    for node in reversed(tape.nodes[:loss.index + 1]):
        g = grads.pop(node.index, None)
        if g is None:
            continue
        if node.index in wanted:
            found[node.index] = g
        if node.parents is None:
            continue
        for parent, vjp in node.parents:
            contrib = vjp(g)
            prev = grads.get(parent.index)
            grads[parent.index] = contrib if prev is None else prev + contrib
    return [np.array(found[n.index], dtype=np.float64).reshape(n.shape)
            if n.index in found else np.zeros(n.shape) for n in wrt]
