"""Reverse-mode automatic differentiation over dense numpy arrays.

A :class:`Tape` records every intermediate :class:`Node` in creation order;
the backward pass walks the tape once in reverse.  Only the operations the
model needs are registered (elementwise arithmetic, matmul, reductions,
slicing, Cholesky and triangular solves).  All values are float64.
"""

from __future__ import annotations

import numpy as np
import scipy.linalg


class NumericalError(RuntimeError):
    """A forward-pass value contained NaN or Inf."""

    def __init__(self, op_name, detail=""):
        self.op_name = op_name
        super().__init__(f"non-finite value produced by op '{op_name}' {detail}".rstrip())


# Set to False to skip per-node finiteness checks (they are cheap at the
# matrix sizes this package uses, so they stay on by default).
CHECK_FINITE = True


class Tape:
    """Records nodes in creation order; reverse order is a valid topological
    order for the backward pass."""

    def __init__(self):
        self.nodes = []


class Node:
    __slots__ = ("value", "tape", "parents", "vjps", "op_name")

    # make `ndarray <op> Node` defer to our reflected operators
    __array_ufunc__ = None
    __array_priority__ = 1000

    def __init__(self, value, tape, parents=(), vjps=(), op_name="leaf"):
        value = np.asarray(value, dtype=np.float64)
        if CHECK_FINITE and not np.all(np.isfinite(value)):
            raise NumericalError(op_name)
        self.value = value
        self.tape = tape
        self.parents = parents
        self.vjps = vjps
        self.op_name = op_name
        tape.nodes.append(self)

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    # -- operator sugar ---------------------------------------------------
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
        return neg(self)

    def __pow__(self, p):
        return power(self, p)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, key):
        return getitem(self, key)

    @property
    def T(self):
        return transpose(self)


def leaf(value, tape, name="leaf"):
    return Node(value, tape, op_name=name)


def value_of(x):
    return x.value if isinstance(x, Node) else np.asarray(x, dtype=np.float64)


def _tape_of(*args):
    for a in args:
        if isinstance(a, Node):
            return a.tape
    raise TypeError("at least one argument must be a Node")


def _unbroadcast(grad, shape):
    """Sum `grad` down to `shape` undoing numpy broadcasting."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and grad.shape[ax] != 1:
            grad = grad.sum(axis=ax, keepdims=True)
    return grad.reshape(shape)


def _make(op_name, value, inputs, vjps):
    """Create a node; `vjps` pairs up with the Node-typed entries of
    `inputs` (constants carry no vjp).  All-constant inputs short-circuit
    to a plain array so graph code doubles as plain numpy code."""
    if not any(isinstance(x, Node) for x in inputs):
        return np.asarray(value, dtype=np.float64)
    tape = _tape_of(*inputs)
    parents, fns = [], []
    for x, f in zip(inputs, vjps):
        if isinstance(x, Node) and f is not None:
            parents.append(x)
            fns.append(f)
    return Node(value, tape, tuple(parents), tuple(fns), op_name)


# -- elementwise ----------------------------------------------------------

def add(a, b):
    av, bv = value_of(a), value_of(b)
    return _make("add", av + bv, (a, b),
                 (lambda g: _unbroadcast(g, av.shape),
                  lambda g: _unbroadcast(g, bv.shape)))


def sub(a, b):
    av, bv = value_of(a), value_of(b)
    return _make("sub", av - bv, (a, b),
                 (lambda g: _unbroadcast(g, av.shape),
                  lambda g: _unbroadcast(-g, bv.shape)))


def mul(a, b):
    av, bv = value_of(a), value_of(b)
    return _make("mul", av * bv, (a, b),
                 (lambda g: _unbroadcast(g * bv, av.shape),
                  lambda g: _unbroadcast(g * av, bv.shape)))


def div(a, b):
    av, bv = value_of(a), value_of(b)
    out = av / bv
    return _make("div", out, (a, b),
                 (lambda g: _unbroadcast(g / bv, av.shape),
                  lambda g: _unbroadcast(-g * out / bv, bv.shape)))


def neg(a):
    av = value_of(a)
    return _make("neg", -av, (a,), (lambda g: -g,))


def power(a, p):
    av = value_of(a)
    return _make("pow", av ** p, (a,), (lambda g: g * p * av ** (p - 1),))


def exp(a):
    if not isinstance(a, Node):
        return np.exp(a)
    out = np.exp(a.value)
    return _make("exp", out, (a,), (lambda g: g * out,))


def log(a):
    if not isinstance(a, Node):
        return np.log(a)
    av = a.value
    return _make("log", np.log(av), (a,), (lambda g: g / av,))


def sqrt(a):
    if not isinstance(a, Node):
        return np.sqrt(a)
    out = np.sqrt(a.value)
    return _make("sqrt", out, (a,), (lambda g: g * 0.5 / out,))


def square(a):
    if not isinstance(a, Node):
        return np.square(a)
    return power(a, 2.0)


def tanh(a):
    if not isinstance(a, Node):
        return np.tanh(a)
    out = np.tanh(a.value)
    return _make("tanh", out, (a,), (lambda g: g * (1.0 - out * out),))


def clip_min(a, floor):
    """max(a, floor); gradient flows only where a > floor."""
    if not isinstance(a, Node):
        return np.maximum(a, floor)
    av = a.value
    mask = av > floor
    return _make("clip_min", np.maximum(av, floor), (a,), (lambda g: g * mask,))


# -- shape / structure ----------------------------------------------------

def transpose(a, axes=None):
    if not isinstance(a, Node):
        return np.transpose(a, axes)
    av = a.value
    if axes is None:
        inv = None
    else:
        inv = np.argsort(axes)
    return _make("transpose", np.transpose(av, axes), (a,),
                 (lambda g: np.transpose(g, inv),))


def reshape(a, shape):
    if not isinstance(a, Node):
        return np.reshape(a, shape)
    old = a.value.shape
    return _make("reshape", a.value.reshape(shape), (a,),
                 (lambda g: g.reshape(old),))


def getitem(a, key):
    av = a.value

    def vjp(g):
        out = np.zeros_like(av)
        np.add.at(out, key, g)
        return out

    return _make("getitem", av[key], (a,), (vjp,))


def concatenate(parts, axis=0):
    if not any(isinstance(p, Node) for p in parts):
        return np.concatenate([value_of(p) for p in parts], axis=axis)
    vals = [value_of(p) for p in parts]
    sizes = [v.shape[axis] for v in vals]
    offsets = np.cumsum([0] + sizes)

    def make_vjp(i):
        sl = [slice(None)] * vals[0].ndim
        sl[axis] = slice(offsets[i], offsets[i + 1])
        sl = tuple(sl)
        return lambda g: g[sl]

    tape = _tape_of(*parts)
    parents, fns = [], []
    for i, p in enumerate(parts):
        if isinstance(p, Node):
            parents.append(p)
            fns.append(make_vjp(i))
    return Node(np.concatenate(vals, axis=axis), tape, tuple(parents),
                tuple(fns), "concatenate")


def sum_(a, axis=None, keepdims=False):
    if not isinstance(a, Node):
        return np.sum(a, axis=axis, keepdims=keepdims)
    av = a.value

    def vjp(g):
        if axis is None:
            return np.broadcast_to(g, av.shape).copy()
        g_ = g if keepdims else np.expand_dims(g, axis)
        return np.broadcast_to(g_, av.shape).copy()

    return _make("sum", np.sum(av, axis=axis, keepdims=keepdims), (a,), (vjp,))


def mean_(a, axis=None, keepdims=False):
    av = value_of(a)
    n = av.size if axis is None else av.shape[axis]
    return sum_(a, axis=axis, keepdims=keepdims) / n


def tril(a, k=0):
    """Lower-triangular mask on the last two axes."""
    if not isinstance(a, Node):
        return np.tril(a, k)
    mask = np.tril(np.ones(a.value.shape[-2:]), k)
    return _make("tril", a.value * mask, (a,), (lambda g: g * mask,))


def diag_part(a):
    """Diagonal of the last two axes; (..., M, M) -> (..., M)."""
    if not isinstance(a, Node):
        return np.diagonal(a, axis1=-2, axis2=-1)
    av = a.value
    m = av.shape[-1]
    idx = np.arange(m)

    def vjp(g):
        out = np.zeros_like(av)
        out[..., idx, idx] = g
        return out

    return _make("diag_part", np.diagonal(av, axis1=-2, axis2=-1), (a,), (vjp,))


def diag_matrix(v):
    """Embed (..., M) as diagonal (..., M, M)."""
    if not isinstance(v, Node):
        m = np.asarray(v).shape[-1]
        out = np.zeros(np.asarray(v).shape + (m,))
        idx = np.arange(m)
        out[..., idx, idx] = v
        return out
    vv = v.value
    m = vv.shape[-1]
    idx = np.arange(m)
    out = np.zeros(vv.shape + (m,))
    out[..., idx, idx] = vv
    return _make("diag_matrix", out, (v,), (lambda g: g[..., idx, idx],))


# -- linear algebra -------------------------------------------------------

def matmul(a, b):
    av, bv = value_of(a), value_of(b)

    def vjp_a(g):
        gb = np.swapaxes(bv, -1, -2)
        return _unbroadcast(np.matmul(g, gb), av.shape)

    def vjp_b(g):
        ga = np.swapaxes(av, -1, -2)
        return _unbroadcast(np.matmul(ga, g), bv.shape)

    return _make("matmul", np.matmul(av, bv), (a, b), (vjp_a, vjp_b))


def cholesky(a):
    """Lower Cholesky factor; raises on a non-PD input (no silent jitter)."""
    av = value_of(a)
    try:
        L = np.linalg.cholesky(av)
    except np.linalg.LinAlgError as e:
        raise np.linalg.LinAlgError(
            f"Cholesky factorization failed on a {av.shape} matrix: {e}")
    if not isinstance(a, Node):
        return L

    def vjp(g):
        # standard Cholesky adjoint: Abar = L^-T Phi(L^T g) L^-1, symmetrized
        p = np.tril(L.T @ g)
        idx = np.arange(p.shape[-1])
        p[..., idx, idx] *= 0.5
        x = scipy.linalg.solve_triangular(L, p, lower=True, trans="T")
        abar = scipy.linalg.solve_triangular(L, x.T, lower=True, trans="T").T
        return 0.5 * (abar + abar.T)

    return _make("cholesky", L, (a,), (vjp,))


def solve_triangular(l, b, trans="N"):
    """Solve L x = b (trans='N') or L^T x = b (trans='T'); L lower-triangular."""
    lv, bv = value_of(l), value_of(b)
    squeeze = bv.ndim == 1
    b2 = bv[:, None] if squeeze else bv
    x = scipy.linalg.solve_triangular(lv, b2, lower=True, trans=trans)
    flip = "T" if trans == "N" else "N"

    def vjp_b(g):
        g2 = g[:, None] if squeeze else g
        gb = scipy.linalg.solve_triangular(lv, g2, lower=True, trans=flip)
        return gb[:, 0] if squeeze else gb

    def vjp_l(g):
        g2 = g[:, None] if squeeze else g
        gb = scipy.linalg.solve_triangular(lv, g2, lower=True, trans=flip)
        if trans == "N":
            gl = -gb @ x.T
        else:
            gl = -x @ gb.T
        return np.tril(gl)

    out = x[:, 0] if squeeze else x
    return _make("solve_triangular", out, (l, b), (vjp_l, vjp_b))


def logsumexp_weighted(a, weights, axis=-1):
    """log(sum_i weights_i * exp(a_i)) along `axis`, numerically stabilized.

    `weights` are positive constants broadcast along `axis`."""
    av = value_of(a)
    ax = axis % av.ndim
    # detached shift; exact because the shift's own derivative cancels
    shift = np.max(av, axis=ax, keepdims=True)
    wshape = [1] * av.ndim
    wshape[ax] = -1
    w = np.asarray(weights, dtype=np.float64).reshape(wshape)
    if isinstance(a, Node):
        s = sum_(exp(a - shift) * w, axis=ax)
        return log(s) + np.squeeze(shift, axis=ax)
    s = np.sum(np.exp(av - shift) * w, axis=ax)
    return np.log(s) + np.squeeze(shift, axis=ax)


# -- backward pass --------------------------------------------------------

def grad(target, wrt):
    """Gradients of a scalar `target` node with respect to the nodes in `wrt`.

    Returns a list of arrays aligned with `wrt`.  Nodes that `target` does
    not depend on get zero gradients.
    """
    if np.asarray(target.value).size != 1:
        raise ValueError("grad target must be scalar, got shape "
                         f"{target.value.shape}")
    grads = {id(target): np.ones_like(target.value)}
    wrt_ids = {id(w) for w in wrt}
    results = {}
    # reverse topological order = reverse creation order on the tape
    for node in reversed(target.tape.nodes):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if id(node) in wrt_ids:
            results[id(node)] = g
        for parent, vjp in zip(node.parents, node.vjps):
            contrib = vjp(g)
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + contrib
            else:
                grads[key] = contrib
    return [results.get(id(w), np.zeros_like(w.value)) for w in wrt]
