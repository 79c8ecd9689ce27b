"""Define-by-run reverse-mode differentiation over numpy arrays.

A :class:`GradTape` records every primitive applied to values that descend
from one of its parameters. Values that do not touch a parameter are plain
constants and are never recorded, which is how stop-gradient branches (the
SSL teacher, frozen inputs) cost nothing.

    tape = GradTape()
    w = tape.param("w", np.ones((3, 2)))
    loss = ops.sum(ops.matmul(x, w))
    grads = tape.backward(loss)          # {"w": ...}
"""

import math

import numpy as np

from .errors import ContractError, DimensionError


class Node:
    """A value, optionally attached to a tape."""

    __slots__ = ("value", "tape", "parents", "backward_fn", "__weakref__")

    def __init__(self, value, tape=None, parents=(), backward_fn=None):
        self.value = value
        self.tape = tape
        self.parents = parents
        self.backward_fn = backward_fn

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(as_node(other)))

    def __rsub__(self, other):
        return add(as_node(other), neg(self))

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, other)
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if not isinstance(other, (int, float)):
            raise ContractError("only division by a Python scalar is supported")
        return scale(self, 1.0 / other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(as_node(other), self)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def __repr__(self):
        state = "tracked" if self.tape is not None else "const"
        return f"Node({state}, shape={self.value.shape}, dtype={self.value.dtype})"


class GradTape:
    """Records primitives and replays them backwards.

    Nodes are appended in execution order, which is a topological order of
    the computation graph, so a reverse sweep visits every node after all of
    its consumers.
    """

    def __init__(self):
        self.nodes = []
        self.params = {}

    def param(self, name, value):
        """Register (or fetch) a named leaf whose gradient will be reported."""
        node = self.params.get(name)
        if node is None:
            node = Node(np.asarray(value), tape=self)
            self.params[name] = node
        return node

    def record(self, value, parents, backward_fn):
        node = Node(value, tape=self, parents=parents, backward_fn=backward_fn)
        self.nodes.append(node)
        return node

    def backward(self, loss):
        """Return ``{name: d loss / d param}`` for every registered parameter.

        Parameters that the loss does not depend on get zero gradients.
        """
        if not isinstance(loss, Node) or loss.value.size != 1:
            raise ContractError("backward needs a scalar loss node")
        if loss.tape is not self:
            return {name: np.zeros_like(p.value) for name, p in self.params.items()}

        grads = {id(loss): np.ones_like(loss.value)}
        for node in reversed(self.nodes):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            parent_grads = node.backward_fn(g)
            for parent, pg in zip(node.parents, parent_grads):
                if pg is None or parent.tape is None:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg
        out = {}
        for name, p in self.params.items():
            g = grads.get(id(p))
            out[name] = np.zeros_like(p.value) if g is None else g.reshape(p.value.shape)
        return out


def as_node(x):
    if isinstance(x, Node):
        return x
    return Node(np.asarray(x))


def _apply(value, parents, backward_fn):
    tape = None
    for p in parents:
        if p.tape is not None:
            tape = p.tape
            break
    if tape is None:
        return Node(value)
    return tape.record(value, parents, backward_fn)


def _unbroadcast(grad, shape):
    """Sum ``grad`` down to ``shape`` after numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


# -- elementwise -------------------------------------------------------------

def add(a, b):
    a, b = as_node(a), as_node(b)
    sa, sb = a.value.shape, b.value.shape
    return _apply(a.value + b.value, (a, b),
                  lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def neg(a):
    return _apply(-a.value, (a,), lambda g: (-g,))


def mul(a, b):
    a, b = as_node(a), as_node(b)
    av, bv = a.value, b.value
    return _apply(av * bv, (a, b),
                  lambda g: (_unbroadcast(g * bv, av.shape), _unbroadcast(g * av, bv.shape)))


def scale(a, c):
    """Multiply by a Python scalar without changing the array dtype."""
    c = float(c)
    return _apply(a.value * c, (a,), lambda g: (g * c,))


def exp(a):
    out = np.exp(a.value)
    return _apply(out, (a,), lambda g: (g * out,))


def log(a):
    av = a.value
    return _apply(np.log(av), (a,), lambda g: (g / av,))


def gelu(a):
    """GELU, tanh approximation."""
    x = a.value
    c = math.sqrt(2.0 / math.pi)
    x2 = x * x
    t = np.tanh(c * x * (1.0 + 0.044715 * x2))
    out = 0.5 * x * (1.0 + t)

    def backward(g):
        dinner = c * (1.0 + 3 * 0.044715 * x2)
        return (g * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * dinner),)

    return _apply(out, (a,), backward)


# -- reductions and shape ----------------------------------------------------

def sum(a, axis=None, keepdims=False):  # noqa: A001 - mirrors numpy
    shape = a.value.shape
    out = a.value.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _apply(np.asarray(out), (a,), backward)


def mean(a, axis=None, keepdims=False):
    n = a.value.size if axis is None else np.prod([a.value.shape[i] for i in np.atleast_1d(axis)])
    return scale(sum(a, axis=axis, keepdims=keepdims), 1.0 / float(n))


def reshape(a, shape):
    old = a.value.shape
    return _apply(a.value.reshape(shape), (a,), lambda g: (g.reshape(old),))


def transpose(a, axes):
    inv = np.argsort(axes)
    return _apply(a.value.transpose(axes), (a,), lambda g: (g.transpose(inv),))


def broadcast_to(a, shape):
    old = a.value.shape
    return _apply(np.broadcast_to(a.value, shape), (a,), lambda g: (_unbroadcast(g, old),))


def getitem(a, idx):
    """Basic (slice/integer) indexing only; fancy indices would alias."""
    shape = a.value.shape

    def backward(g):
        out = np.zeros(shape, dtype=g.dtype)
        out[idx] += g
        return (out,)

    return _apply(a.value[idx], (a,), backward)


def concat(nodes, axis):
    nodes = [as_node(n) for n in nodes]
    sizes = [n.value.shape[axis] for n in nodes]
    bounds = np.cumsum(sizes)[:-1]
    out = np.concatenate([n.value for n in nodes], axis=axis)
    return _apply(out, tuple(nodes), lambda g: tuple(np.split(g, bounds, axis=axis)))


# -- linear algebra ----------------------------------------------------------

def matmul(a, b):
    """Batched matrix product with numpy broadcasting on leading axes."""
    a, b = as_node(a), as_node(b)
    av, bv = a.value, b.value
    if av.ndim < 2 or bv.ndim < 2 or av.shape[-1] != bv.shape[-2]:
        raise DimensionError(f"matmul shape mismatch: {av.shape} @ {bv.shape}")

    def backward(g):
        ga = g @ np.swapaxes(bv, -1, -2)
        gb = np.swapaxes(av, -1, -2) @ g
        return _unbroadcast(ga, av.shape), _unbroadcast(gb, bv.shape)

    return _apply(av @ bv, (a, b), backward)


def linear(x, weight, bias=None):
    """``x @ weight.T + bias`` with ``weight`` stored as (out, in)."""
    out = matmul(x, transpose(as_node(weight), (1, 0)))
    if bias is not None:
        out = add(out, bias)
    return out


# -- normalisation -----------------------------------------------------------

def softmax(a, axis=-1):
    x = a.value
    e = np.exp(x - x.max(axis=axis, keepdims=True))
    s = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (s * (g - (g * s).sum(axis=axis, keepdims=True)),)

    return _apply(s, (a,), backward)


def log_softmax(a, axis=-1):
    x = a.value
    shifted = x - x.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out = shifted - lse
    s = np.exp(out)

    def backward(g):
        return (g - s * g.sum(axis=axis, keepdims=True),)

    return _apply(out, (a,), backward)


def layernorm(a, gamma, beta, eps=1e-6):
    """Layer normalisation over the last axis."""
    gamma, beta = as_node(gamma), as_node(beta)
    x = a.value
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    gv = gamma.value
    out = xhat * gv + beta.value

    def backward(g):
        gx = g * gv
        dx = inv * (gx - gx.mean(axis=-1, keepdims=True)
                    - xhat * (gx * xhat).mean(axis=-1, keepdims=True))
        dgamma = _unbroadcast(g * xhat, gv.shape)
        dbeta = _unbroadcast(g, beta.value.shape)
        return dx, dgamma, dbeta

    return _apply(out, (a, gamma, beta), backward)


def l2_normalize(a, axis=-1, eps=1e-12):
    x = a.value
    norm = np.sqrt((x * x).sum(axis=axis, keepdims=True))
    denom = np.maximum(norm, eps)
    y = x / denom

    def backward(g):
        return ((g - y * (g * y).sum(axis=axis, keepdims=True)) / denom,)

    return _apply(y, (a,), backward)
