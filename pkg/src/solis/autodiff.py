"""Tape-based reverse-mode autodiff with dual-number time derivatives.

Every :class:`Node` holds a numpy array (a 0-d array for scalar graphs) and
remembers the operation that produced it. Node ids are issued in creation
order, so sorting reachable nodes by id gives a valid topological order.

Forward-mode derivatives with respect to time are carried by :class:`Dual`,
whose primal and tangent parts are themselves nodes (or plain arrays). Because
the tangent is built out of ordinary tape operations, reverse-mode gradients
of expressions that contain ``d/dt`` terms come for free (reverse over forward).

The module-level functions (:func:`tanh`, :func:`matmul`, ...) accept plain
arrays, nodes or duals, and return the same kind of object. Network code
written against them runs unchanged for fast numpy inference, for gradient
computation, and for time derivatives.
"""

import itertools

import numpy as np

from .exceptions import ConfigurationError, NumericalError, UsageError

_ids = itertools.count()

PRIMITIVES = ("add", "mul", "neg", "reciprocal", "tanh", "exp", "sqrt",
              "softplus", "maximum", "abs")


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, s in enumerate(shape):
        if s == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _expand_like(g, shape, axis, keepdims):
    if axis is not None and not keepdims:
        g = np.expand_dims(g, axis)
    return np.broadcast_to(g, shape)


def _matmul_vjp(g, a, b, needs):
    ga = gb = None
    if a.ndim == 1 and b.ndim == 1:
        if needs[0]:
            ga = g * b
        if needs[1]:
            gb = g * a
        return ga, gb
    if a.ndim == 1:
        if needs[0]:
            ga = b @ g
        if needs[1]:
            gb = np.outer(a, g)
        return ga, gb
    if b.ndim == 1:
        if needs[0]:
            ga = np.outer(g, b)
        if needs[1]:
            gb = a.T @ g
        return ga, gb
    if needs[0]:
        ga = g @ b.T
    if needs[1]:
        gb = a.T @ g
    return ga, gb


def _concat_vjp(g, vals, axis):
    sizes = np.cumsum([v.shape[axis] for v in vals])[:-1]
    return np.split(g, sizes, axis=axis)


def _getitem_vjp(g, a, key):
    out = np.zeros(a.shape)
    np.add.at(out, key, g)
    return out


# op -> (forward(vals, attrs), vjp(g, vals, out, attrs, needs) -> tuple of grads)
_OPS = {
    "add": (lambda v, at: v[0] + v[1],
            lambda g, v, o, at, n: (_unbroadcast(g, v[0].shape) if n[0] else None,
                                    _unbroadcast(g, v[1].shape) if n[1] else None)),
    "mul": (lambda v, at: v[0] * v[1],
            lambda g, v, o, at, n: (_unbroadcast(g * v[1], v[0].shape) if n[0] else None,
                                    _unbroadcast(g * v[0], v[1].shape) if n[1] else None)),
    "neg": (lambda v, at: -v[0], lambda g, v, o, at, n: (-g,)),
    "reciprocal": (lambda v, at: 1.0 / v[0], lambda g, v, o, at, n: (-g * o * o,)),
    "tanh": (lambda v, at: np.tanh(v[0]), lambda g, v, o, at, n: (g * (1.0 - o * o),)),
    "exp": (lambda v, at: np.exp(v[0]), lambda g, v, o, at, n: (g * o,)),
    "sqrt": (lambda v, at: np.sqrt(v[0]), lambda g, v, o, at, n: (0.5 * g / o,)),
    "softplus": (lambda v, at: np.logaddexp(0.0, v[0]),
                 lambda g, v, o, at, n: (g * _sigmoid(v[0]),)),
    "maximum": (lambda v, at: np.maximum(v[0], v[1]),
                lambda g, v, o, at, n: (
                    _unbroadcast(g * (v[0] >= v[1]), v[0].shape) if n[0] else None,
                    _unbroadcast(g * (v[0] < v[1]), v[1].shape) if n[1] else None)),
    "abs": (lambda v, at: np.abs(v[0]), lambda g, v, o, at, n: (g * np.sign(v[0]),)),
    "matmul": (lambda v, at: v[0] @ v[1],
               lambda g, v, o, at, n: _matmul_vjp(g, v[0], v[1], n)),
    "sum": (lambda v, at: np.sum(v[0], axis=at["axis"], keepdims=at["keepdims"]),
            lambda g, v, o, at, n: (_expand_like(g, v[0].shape, at["axis"], at["keepdims"]),)),
    "reshape": (lambda v, at: np.reshape(v[0], at["shape"]),
                lambda g, v, o, at, n: (np.reshape(g, v[0].shape),)),
    "broadcast": (lambda v, at: np.broadcast_to(v[0], at["shape"]),
                  lambda g, v, o, at, n: (_unbroadcast(g, v[0].shape),)),
    "getitem": (lambda v, at: v[0][at["key"]],
                lambda g, v, o, at, n: (_getitem_vjp(g, v[0], at["key"]),)),
    "concat": (lambda v, at: np.concatenate(v, axis=at["axis"]),
               lambda g, v, o, at, n: _concat_vjp(g, v, at["axis"])),
    "transpose": (lambda v, at: v[0].T, lambda g, v, o, at, n: (g.T,)),
}


def _check_finite(value, node_id, op):
    if not np.all(np.isfinite(value)):
        raise NumericalError(f"non-finite value produced by node #{node_id} ({op})")


class Node:
    """One vertex of the computation graph.

    Leaves have ``op`` equal to ``"input"`` (named, bindable, differentiable
    when ``trainable``) or ``"constant"``.
    """

    __slots__ = ("id", "op", "parents", "attrs", "value", "name", "trainable",
                 "requires_grad")
    __array_ufunc__ = None

    def __init__(self, op, parents=(), attrs=None, value=None, name=None, trainable=False):
        self.id = next(_ids)
        self.op = op
        self.parents = parents
        self.attrs = attrs
        self.value = value
        self.name = name
        self.trainable = trainable
        self.requires_grad = trainable or any(p.requires_grad for p in parents)

    def __repr__(self):
        label = f" {self.name!r}" if self.name else ""
        return f"Node(#{self.id} {self.op}{label}, shape={self.shape})"

    @property
    def shape(self):
        return None if self.value is None else self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    @property
    def T(self):
        return transpose(self)

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return add(self, neg(other))

    def __rsub__(self, other):
        return add(other, neg(self))

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return mul(self, reciprocal(other))

    def __rtruediv__(self, other):
        return mul(other, reciprocal(self))

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __pow__(self, k):
        return power(self, k)

    def __getitem__(self, key):
        return getitem(self, key)

    def __abs__(self):
        return absolute(self)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)


def variable(value=None, name=None, trainable=True):
    """Create a differentiable leaf. ``value=None`` leaves it unbound."""
    if value is not None:
        value = np.array(value, dtype=float)
    return Node("input", (), None, value, name=name, trainable=trainable)


def constant(value):
    return Node("constant", (), None, np.asarray(value, dtype=float))


def _as_node(x):
    return x if isinstance(x, Node) else constant(x)


def _apply(op, *args, **attrs):
    if not any(isinstance(a, Node) for a in args):
        vals = [np.asarray(a, dtype=float) for a in args]
        return _OPS[op][0](vals, attrs)
    nodes = tuple(_as_node(a) for a in args)
    node = Node(op, nodes, attrs)
    if all(p.value is not None for p in nodes):
        with np.errstate(all="ignore"):  # non-finite results are reported below
            value = _OPS[op][0]([p.value for p in nodes], attrs)
        _check_finite(value, node.id, op)
        node.value = value
    return node


class Dual:
    """A value paired with its derivative along one scalar direction (time).

    ``tangent=None`` stands for an identically zero derivative.
    """

    __slots__ = ("primal", "tangent")
    __array_ufunc__ = None

    def __init__(self, primal, tangent=None):
        self.primal = primal
        self.tangent = tangent

    def __repr__(self):
        return f"Dual({self.primal!r}, {self.tangent!r})"

    @property
    def shape(self):
        return np.shape(value_of(self.primal))

    @property
    def T(self):
        return transpose(self)

    __add__ = Node.__add__
    __radd__ = Node.__radd__
    __sub__ = Node.__sub__
    __rsub__ = Node.__rsub__
    __mul__ = Node.__mul__
    __rmul__ = Node.__rmul__
    __truediv__ = Node.__truediv__
    __rtruediv__ = Node.__rtruediv__
    __neg__ = Node.__neg__
    __matmul__ = Node.__matmul__
    __rmatmul__ = Node.__rmatmul__
    __pow__ = Node.__pow__
    __getitem__ = Node.__getitem__
    __abs__ = Node.__abs__
    sum = Node.sum
    mean = Node.mean


def value_of(x):
    """The numeric value behind a node, dual or array."""
    if isinstance(x, Dual):
        return value_of(x.primal)
    if isinstance(x, Node):
        return x.value
    return np.asarray(x, dtype=float)


def _split(x):
    if isinstance(x, Dual):
        return x.primal, x.tangent
    return x, None


def _full_tangent(d):
    """Tangent broadcast to the primal's shape (needed before reductions)."""
    shape = np.shape(value_of(d.primal))
    t = d.tangent
    if t is None:
        return None
    if np.shape(value_of(t)) != shape:
        t = broadcast_to(t, shape)
    return t


def _tadd(a, b):
    if a is None:
        return b
    if b is None:
        return a
    return add(a, b)


def _tscale(factor, t):
    return None if t is None else mul(factor, t)


# --- primitives -----------------------------------------------------------

def add(a, b):
    if isinstance(a, Dual) or isinstance(b, Dual):
        pa, ta = _split(a)
        pb, tb = _split(b)
        return Dual(add(pa, pb), _tadd(ta, tb))
    return _apply("add", a, b)


def mul(a, b):
    if isinstance(a, Dual) or isinstance(b, Dual):
        pa, ta = _split(a)
        pb, tb = _split(b)
        return Dual(mul(pa, pb), _tadd(_tscale(pb, ta), _tscale(pa, tb)))
    return _apply("mul", a, b)


def neg(a):
    if isinstance(a, Dual):
        return Dual(neg(a.primal), None if a.tangent is None else neg(a.tangent))
    return _apply("neg", a)


def reciprocal(a):
    if isinstance(a, Dual):
        y = reciprocal(a.primal)
        return Dual(y, _tscale(neg(mul(y, y)), a.tangent))
    return _apply("reciprocal", a)


def tanh(a):
    if isinstance(a, Dual):
        y = tanh(a.primal)
        return Dual(y, _tscale(add(1.0, neg(mul(y, y))), a.tangent))
    return _apply("tanh", a)


def exp(a):
    if isinstance(a, Dual):
        y = exp(a.primal)
        return Dual(y, _tscale(y, a.tangent))
    return _apply("exp", a)


def sqrt(a):
    if isinstance(a, Dual):
        y = sqrt(a.primal)
        return Dual(y, _tscale(mul(0.5, reciprocal(y)), a.tangent))
    return _apply("sqrt", a)


def softplus(a):
    if isinstance(a, Dual):
        return Dual(softplus(a.primal), _tscale(sigmoid(a.primal), a.tangent))
    return _apply("softplus", a)


def maximum(a, b):
    if isinstance(a, Dual) or isinstance(b, Dual):
        pa, ta = _split(a)
        pb, tb = _split(b)
        mask = (value_of(pa) >= value_of(pb)).astype(float)
        return Dual(maximum(pa, pb), _tadd(_tscale(mask, ta), _tscale(1.0 - mask, tb)))
    return _apply("maximum", a, b)


def absolute(a):
    if isinstance(a, Dual):
        return Dual(absolute(a.primal), _tscale(np.sign(value_of(a.primal)), a.tangent))
    return _apply("abs", a)


# --- composites and structure ---------------------------------------------

def sigmoid(a):
    return mul(0.5, add(1.0, tanh(mul(0.5, a))))


def power(a, k):
    if k not in (1, 2, 3):
        raise UsageError("only integer powers 1, 2 and 3 are supported")
    out = a
    for _ in range(k - 1):
        out = mul(out, a)
    return out


def matmul(a, b):
    if isinstance(a, Dual) or isinstance(b, Dual):
        pa, ta = _split(a)
        pb, tb = _split(b)
        ta = _full_tangent(a) if isinstance(a, Dual) else None
        tb = _full_tangent(b) if isinstance(b, Dual) else None
        t = _tadd(None if ta is None else matmul(ta, pb), None if tb is None else matmul(pa, tb))
        return Dual(matmul(pa, pb), t)
    return _apply("matmul", a, b)


def sum_(a, axis=None, keepdims=False):
    if isinstance(a, Dual):
        t = _full_tangent(a)
        return Dual(sum_(a.primal, axis, keepdims),
                    None if t is None else sum_(t, axis, keepdims))
    return _apply("sum", a, axis=axis, keepdims=keepdims)


def mean(a, axis=None, keepdims=False):
    shape = np.shape(value_of(a))
    count = int(np.prod(shape)) if axis is None else shape[axis]
    return mul(1.0 / count, sum_(a, axis=axis, keepdims=keepdims))


def reshape(a, shape):
    if isinstance(a, Dual):
        t = _full_tangent(a)
        return Dual(reshape(a.primal, shape), None if t is None else reshape(t, shape))
    return _apply("reshape", a, shape=tuple(shape))


def broadcast_to(a, shape):
    if isinstance(a, Dual):
        t = a.tangent
        return Dual(broadcast_to(a.primal, shape), None if t is None else broadcast_to(t, shape))
    return _apply("broadcast", a, shape=tuple(shape))


def getitem(a, key):
    if isinstance(a, Dual):
        t = _full_tangent(a)
        return Dual(getitem(a.primal, key), None if t is None else getitem(t, key))
    return _apply("getitem", a, key=key)


def transpose(a):
    if isinstance(a, Dual):
        t = _full_tangent(a)
        return Dual(transpose(a.primal), None if t is None else transpose(t))
    return _apply("transpose", a)


def concat(items, axis=-1):
    """Concatenate arrays, nodes or duals along ``axis``."""
    items = list(items)
    if any(isinstance(x, Dual) for x in items):
        primals = [x.primal if isinstance(x, Dual) else x for x in items]
        tangents = []
        any_tangent = False
        for x, p in zip(items, primals):
            t = _full_tangent(x) if isinstance(x, Dual) else None
            if t is None:
                t = np.zeros(np.shape(value_of(p)))
            else:
                any_tangent = True
            tangents.append(t)
        return Dual(concat(primals, axis), concat(tangents, axis) if any_tangent else None)
    return _apply("concat", *items, axis=axis)


def square(a):
    return mul(a, a)


# --- graph-level operations -----------------------------------------------

def _reachable(output, only_grad=False):
    seen = {}
    stack = [output]
    while stack:
        n = stack.pop()
        if n.id in seen:
            continue
        if only_grad and not n.requires_grad:
            continue
        seen[n.id] = n
        stack.extend(n.parents)
    return seen


def evaluate(output, bindings=None):
    """Re-run the forward pass of the graph ending at ``output``.

    ``bindings`` maps input names to values. Inputs already holding a value
    keep it unless rebound. Returns a float for scalar outputs.
    """
    if not isinstance(output, Node):
        raise UsageError("evaluate expects a graph node")
    bindings = bindings or {}
    nodes = _reachable(output)
    for nid in sorted(nodes):
        n = nodes[nid]
        if n.op == "input":
            if n.name is not None and n.name in bindings:
                n.value = np.array(bindings[n.name], dtype=float)
            elif n.value is None:
                raise ConfigurationError(f"input {n.name!r} is unbound")
        elif n.op != "constant":
            with np.errstate(all="ignore"):
                value = _OPS[n.op][0]([p.value for p in n.parents], n.attrs)
            _check_finite(value, n.id, n.op)
            n.value = value
    v = output.value
    return float(v) if v.ndim == 0 else v


class GradientMap(dict):
    """Leaf node -> gradient array. Leaves the output does not touch read as zero."""

    def __missing__(self, leaf):
        return np.zeros(np.shape(leaf.value))


def backward(output, wrt=None):
    """Reverse-mode gradients of a scalar ``output``.

    Returns a :class:`GradientMap` keyed by every trainable leaf reached (and
    every leaf in ``wrt``, zero-filled when untouched).
    """
    if not isinstance(output, Node):
        raise UsageError("backward expects a graph node as output")
    if output.value is None:
        raise UsageError("output has no value; call evaluate first")
    if output.value.size != 1:
        raise UsageError(f"output must be scalar, got shape {output.value.shape}")
    result = GradientMap()
    if wrt is not None:
        for leaf in wrt:
            result[leaf] = np.zeros(np.shape(leaf.value))
    if not output.requires_grad:
        return result
    nodes = _reachable(output, only_grad=True)
    grads = {output.id: np.ones_like(output.value)}
    for nid in sorted(nodes, reverse=True):
        n = nodes[nid]
        g = grads.pop(nid, None)
        if g is None:
            continue
        if not n.parents:
            if n.trainable:
                result[n] = np.array(g, dtype=float).reshape(n.value.shape)
            continue
        needs = tuple(p.requires_grad for p in n.parents)
        pgrads = _OPS[n.op][1](g, [p.value for p in n.parents], n.value, n.attrs, needs)
        for p, gp, need in zip(n.parents, pgrads, needs):
            if not need or gp is None:
                continue
            prev = grads.get(p.id)
            grads[p.id] = gp if prev is None else prev + gp
    return result


def time_derivative(network_fn, t, *conditioning, **kwargs):
    """Evaluate ``network_fn(t, ...)`` together with its exact derivative in ``t``.

    The time input is seeded with unit tangent and pushed through the network
    as a :class:`Dual`. Returns ``(value, d_dt)``; for networks returning a
    tuple, a tuple of such pairs. The results are graph nodes when the network
    weights are nodes, so they can appear inside losses that are later
    differentiated with :func:`backward`.
    """
    t_arr = value_of(t)
    out = network_fn(Dual(t, np.ones(np.shape(t_arr))), *conditioning, **kwargs)
    if isinstance(out, tuple):
        return tuple(_unpack(o) for o in out)
    return _unpack(out)


def _unpack(d):
    if not isinstance(d, Dual):
        return d, np.zeros(np.shape(value_of(d)))
    t = _full_tangent(d)
    if t is None:
        t = np.zeros(np.shape(value_of(d.primal)))
    if not np.all(np.isfinite(value_of(t))):
        raise NumericalError("non-finite time derivative")
    return d.primal, t
