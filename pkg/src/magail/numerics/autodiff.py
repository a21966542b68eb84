"""Reverse-mode automatic differentiation over a small, fixed op set.

Every op accepts either plain ``numpy`` arrays or :class:`Node` objects. When
none of the inputs is a node the op simply returns an array, so the same model
code runs with and without a tape.
"""
from __future__ import annotations

import numpy as np
from scipy.special import expit


class ShapeError(ValueError):
    pass


class NonFiniteError(FloatingPointError):
    pass


class Node:
    __slots__ = ("value", "grad", "parents", "backward_fn", "index", "tape", "op")

    def __init__(self, tape, value, parents=(), backward_fn=None, op="leaf"):
        self.tape = tape
        self.value = value
        self.parents = parents
        self.backward_fn = backward_fn
        self.grad = None
        self.op = op
        self.index = len(tape.nodes)
        tape.nodes.append(self)

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    def __repr__(self):
        return f"Node(op={self.op}, shape={self.value.shape})"

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


class Tape:
    """Records nodes in creation order; ``backward`` walks them in reverse."""

    def __init__(self, check_finite=True):
        self.nodes = []
        self.check_finite = check_finite

    def leaf(self, value):
        return Node(self, np.asarray(value, dtype=np.float64))

    def watch(self, params):
        """Return a dict of leaf nodes, one per parameter of a ParamStore."""
        return {name: self.leaf(value) for name, value in params.items()}

    def record(self, op, value, parents, backward_fn):
        if self.check_finite and not np.isfinite(value).all():
            raise NonFiniteError(
                f"non-finite value produced by op #{len(self.nodes)} ({op})")
        return Node(self, value, parents, backward_fn, op)

    def backward(self, loss):
        if not isinstance(loss, Node) or loss.tape is not self:
            raise ValueError("loss must be a node recorded on this tape")
        if loss.value.size != 1:
            raise ShapeError(f"backward: loss must be scalar, got shape {loss.value.shape}")
        loss.grad = np.ones_like(loss.value)
        for node in reversed(self.nodes[: loss.index + 1]):
            if node.grad is None or node.backward_fn is None:
                continue
            grads = node.backward_fn(node.grad)
            for parent, g in zip(node.parents, grads):
                if parent is None or g is None:
                    continue
                if parent.grad is None:
                    parent.grad = g
                else:
                    parent.grad = parent.grad + g

    def accumulate(self, leaves, params):
        """Add the gradients of watched leaves into ``params`` grad slots."""
        for name, node in leaves.items():
            if node.grad is not None:
                params.grad(name)[...] += node.grad


def _val(x):
    return x.value if isinstance(x, Node) else x


def _tape_of(*xs):
    for x in xs:
        if isinstance(x, Node):
            return x.tape
    return None


def _as_parent(x):
    return x if isinstance(x, Node) else None


def _unbroadcast(g, shape):
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _binary(op, a, b, fn):
    av, bv = _val(a), _val(b)
    try:
        return fn(av, bv), av, bv
    except ValueError as exc:
        raise ShapeError(
            f"{op}: incompatible shapes {np.shape(av)} and {np.shape(bv)}") from exc


def add(a, b):
    out, av, bv = _binary("add", a, b, np.add)
    tape = _tape_of(a, b)
    if tape is None:
        return out
    sa, sb = np.shape(av), np.shape(bv)
    return tape.record("add", out, (_as_parent(a), _as_parent(b)),
                       lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b):
    out, av, bv = _binary("sub", a, b, np.subtract)
    tape = _tape_of(a, b)
    if tape is None:
        return out
    sa, sb = np.shape(av), np.shape(bv)
    return tape.record("sub", out, (_as_parent(a), _as_parent(b)),
                       lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a, b):
    out, av, bv = _binary("mul", a, b, np.multiply)
    tape = _tape_of(a, b)
    if tape is None:
        return out
    sa, sb = np.shape(av), np.shape(bv)
    return tape.record("mul", out, (_as_parent(a), _as_parent(b)),
                       lambda g: (_unbroadcast(g * bv, sa), _unbroadcast(g * av, sb)))


def div(a, b):
    out, av, bv = _binary("div", a, b, np.divide)
    tape = _tape_of(a, b)
    if tape is None:
        return out
    sa, sb = np.shape(av), np.shape(bv)
    return tape.record("div", out, (_as_parent(a), _as_parent(b)),
                       lambda g: (_unbroadcast(g / bv, sa),
                                  _unbroadcast(-g * out / bv, sb)))


def neg(x):
    return mul(x, -1.0)


def matmul(a, b):
    av, bv = _val(a), _val(b)
    try:
        out = np.matmul(av, bv)
    except ValueError as exc:
        raise ShapeError(
            f"matmul: incompatible shapes {np.shape(av)} and {np.shape(bv)}") from exc
    tape = _tape_of(a, b)
    if tape is None:
        return out

    def backward(g):
        a2 = av[None, :] if av.ndim == 1 else av
        b2 = bv[:, None] if bv.ndim == 1 else bv
        g2 = g
        if av.ndim == 1:
            g2 = np.expand_dims(g2, -2)
        if bv.ndim == 1:
            g2 = np.expand_dims(g2, -1)
        ga = np.matmul(g2, np.swapaxes(b2, -1, -2))
        gb = np.matmul(np.swapaxes(a2, -1, -2), g2)
        if av.ndim == 1:
            ga = ga.squeeze(-2)
        if bv.ndim == 1:
            gb = gb.squeeze(-1)
        return _unbroadcast(ga, av.shape), _unbroadcast(gb, bv.shape)

    return tape.record("matmul", out, (_as_parent(a), _as_parent(b)), backward)


def _unary(op, x, fwd, dfn):
    xv = _val(x)
    out = fwd(xv)
    if not isinstance(x, Node):
        return out
    return x.tape.record(op, out, (x,), lambda g: (dfn(g, xv, out),))


def tanh(x):
    return _unary("tanh", x, np.tanh, lambda g, x, y: g * (1.0 - y * y))


def sigmoid(x):
    return _unary("sigmoid", x, expit, lambda g, x, y: g * y * (1.0 - y))


def exp(x):
    return _unary("exp", x, np.exp, lambda g, x, y: g * y)


def log(x):
    return _unary("log", x, np.log, lambda g, x, y: g / x)


def square(x):
    return _unary("square", x, np.square, lambda g, x, y: 2.0 * g * x)


def clip(x, lo, hi):
    """Clamp; the gradient passes wherever ``lo <= x <= hi`` (boundaries included)."""
    return _unary("clip", x, lambda v: np.clip(v, lo, hi),
                  lambda g, v, y: g * ((v >= lo) & (v <= hi)))


def minimum(a, b):
    out, av, bv = _binary("minimum", a, b, np.minimum)
    tape = _tape_of(a, b)
    if tape is None:
        return out
    sa, sb = np.shape(av), np.shape(bv)
    take_a = av <= bv
    return tape.record("minimum", out, (_as_parent(a), _as_parent(b)),
                       lambda g: (_unbroadcast(g * take_a, sa),
                                  _unbroadcast(g * ~take_a, sb)))


def softmax(x, axis=-1):
    xv = _val(x)
    z = xv - xv.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)
    if not isinstance(x, Node):
        return out
    return x.tape.record(
        "softmax", out, (x,),
        lambda g: (out * (g - (g * out).sum(axis=axis, keepdims=True)),))


def sum(x, axis=None, keepdims=False):  # noqa: A001
    xv = _val(x)
    out = np.sum(xv, axis=axis, keepdims=keepdims)
    if not isinstance(x, Node):
        return out
    shape = xv.shape

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return x.tape.record("sum", np.asarray(out), (x,), backward)


def mean(x, axis=None, keepdims=False):
    xv = _val(x)
    n = xv.size if axis is None else np.prod([xv.shape[a] for a in np.atleast_1d(axis)])
    return mul(sum(x, axis=axis, keepdims=keepdims), 1.0 / float(n))


def dot(a, b):
    """Inner product over the last axis (batched)."""
    av, bv = _val(a), _val(b)
    if np.shape(av)[-1:] != np.shape(bv)[-1:]:
        raise ShapeError(f"dot: incompatible shapes {np.shape(av)} and {np.shape(bv)}")
    out, _, _ = _binary("dot", a, b, lambda x, y: np.sum(x * y, axis=-1))
    tape = _tape_of(a, b)
    if tape is None:
        return out
    sa, sb = np.shape(av), np.shape(bv)
    return tape.record(
        "dot", np.asarray(out), (_as_parent(a), _as_parent(b)),
        lambda g: (_unbroadcast(g[..., None] * bv, sa), _unbroadcast(g[..., None] * av, sb)))


def concat(xs, axis=-1):
    vals = [_val(x) for x in xs]
    try:
        out = np.concatenate(vals, axis=axis)
    except ValueError as exc:
        raise ShapeError(
            f"concat: incompatible shapes {[np.shape(v) for v in vals]}") from exc
    tape = _tape_of(*xs)
    if tape is None:
        return out
    splits = np.cumsum([v.shape[axis] for v in vals])[:-1]
    return tape.record("concat", out, tuple(_as_parent(x) for x in xs),
                       lambda g: tuple(np.split(g, splits, axis=axis)))


def getitem(x, idx):
    xv = _val(x)
    try:
        out = xv[idx]
    except IndexError as exc:
        raise ShapeError(f"slice: index {idx!r} invalid for shape {xv.shape}") from exc
    if not isinstance(x, Node):
        return out

    basic = all(isinstance(i, (int, np.integer, slice)) or i is Ellipsis
                for i in (idx if isinstance(idx, tuple) else (idx,)))

    def backward(g):
        full = np.zeros_like(xv)
        if basic:
            full[idx] += g
        else:
            np.add.at(full, idx, g)
        return (full,)

    return x.tape.record("slice", np.asarray(out), (x,), backward)


def reshape(x, shape):
    xv = _val(x)
    try:
        out = np.reshape(xv, shape)
    except ValueError as exc:
        raise ShapeError(f"reshape: cannot reshape {xv.shape} to {shape}") from exc
    if not isinstance(x, Node):
        return out
    return x.tape.record("reshape", out, (x,), lambda g: (g.reshape(xv.shape),))


def expand_dims(x, axis):
    xv = _val(x)
    return reshape(x, np.expand_dims(xv, axis).shape)


def stack(xs, axis=0):
    return concat([expand_dims(x, axis) for x in xs], axis=axis)


def detach(x):
    return _val(x)


def value(x):
    """Plain array behind ``x`` (a no-op for arrays)."""
    return _val(x)



# ---------------------------------------------------------------------------
# fused kernels for the memory controllers


def _parents(*xs):
    return tuple(_as_parent(x) for x in xs)


def lstm(h, c, x, W, b):
    """Fused LSTM step returning ``concat(h', c')`` along the last axis.

    ``W`` is ``[2l, 4l]`` with gate blocks ordered forget, input, candidate,
    output; ``b`` is ``[4l]``.
    """
    hv, cv, xv, Wv, bv = (_val(v) for v in (h, c, x, W, b))
    l = np.shape(hv)[-1]
    if np.shape(Wv) != (2 * l, 4 * l) or np.shape(bv) != (4 * l,):
        raise ShapeError(f"lstm: weights {np.shape(Wv)} / bias {np.shape(bv)} do not fit width {l}")
    hx = np.concatenate([hv, xv], axis=-1)
    z = hx @ Wv + bv
    f = expit(z[..., :l])
    i = expit(z[..., l:2 * l])
    g = np.tanh(z[..., 2 * l:3 * l])
    o = expit(z[..., 3 * l:])
    c_new = f * cv + i * g
    tc = np.tanh(c_new)
    out = np.concatenate([o * tc, c_new], axis=-1)
    tape = _tape_of(h, c, x, W, b)
    if tape is None:
        return out

    def backward(G):
        gh, gc = G[..., :l], G[..., l:]
        dc = gc + gh * o * (1.0 - tc * tc)
        dz = np.concatenate([dc * cv * f * (1.0 - f), dc * g * i * (1.0 - i),
                             dc * i * (1.0 - g * g), gh * tc * o * (1.0 - o)], axis=-1)
        dhx = dz @ Wv.T
        dW = hx.reshape(-1, 2 * l).T @ dz.reshape(-1, 4 * l)
        db = dz.reshape(-1, 4 * l).sum(axis=0)
        return (_unbroadcast(dhx[..., :l], np.shape(hv)), _unbroadcast(dc * f, np.shape(cv)),
                _unbroadcast(dhx[..., l:], np.shape(xv)), dW, db)

    return tape.record("lstm", out, _parents(h, c, x, W, b), backward)


def _rows_dot(M, v):
    """``M_j . v`` for each slot: ``[..., k, l] x [..., l] -> [..., k]``."""
    if M.ndim == 2:
        return v @ M.T
    return np.matmul(M, v[..., None])[..., 0]


def _rows_mix(w, M):
    """``sum_j w_j M_j``: ``[..., k] x [..., k, l] -> [..., l]``."""
    if M.ndim == 2:
        return w @ M
    return np.matmul(w[..., None, :], M)[..., 0, :]


def _outer_rows(w, v, shape):
    """Gradient of a memory matrix from slot weights ``w`` and row vectors ``v``."""
    if len(shape) == 2 and w.ndim > 1:
        return w.reshape(-1, shape[0]).T @ v.reshape(-1, shape[1])
    return _unbroadcast(w[..., :, None] * v[..., None, :], shape)


def attention(M, q):
    """Softmax over slot scores ``q . M_j``; ``M`` is ``[k, l]`` or ``[B, k, l]``."""
    Mv, qv = _val(M), _val(q)
    if np.shape(Mv)[-1] != np.shape(qv)[-1]:
        raise ShapeError(f"attention: memory {np.shape(Mv)} and query {np.shape(qv)} differ in width")
    a = _rows_dot(Mv, qv)
    a = a - a.max(axis=-1, keepdims=True)
    e = np.exp(a)
    alpha = e / e.sum(axis=-1, keepdims=True)
    tape = _tape_of(M, q)
    if tape is None:
        return alpha
    need_M, need_q = isinstance(M, Node), isinstance(q, Node)

    def backward(G):
        ga = alpha * (G - np.sum(G * alpha, axis=-1, keepdims=True))
        gM = _outer_rows(ga, qv, np.shape(Mv)) if need_M else None
        gq = _unbroadcast(_rows_mix(ga, Mv), np.shape(qv)) if need_q else None
        return gM, gq

    return tape.record("attention", alpha, _parents(M, q), backward)


def weighted_rows(alpha, M):
    """``sum_j alpha_j M_j`` with the same shape conventions as :func:`attention`."""
    av, Mv = _val(alpha), _val(M)
    out = _rows_mix(av, Mv)
    tape = _tape_of(alpha, M)
    if tape is None:
        return out
    need_a, need_M = isinstance(alpha, Node), isinstance(M, Node)

    def backward(G):
        galpha = _unbroadcast(_rows_dot(Mv, G), np.shape(av)) if need_a else None
        gM = _outer_rows(av, G, np.shape(Mv)) if need_M else None
        return galpha, gM

    return tape.record("weighted_rows", out, _parents(alpha, M), backward)


def convex_write(M, alpha, w):
    """``M'_j = (1 - alpha_j) M_j + alpha_j w`` for every slot ``j``."""
    Mv, av, wv = _val(M), _val(alpha), _val(w)
    a = av[..., :, None]
    diff = wv[..., None, :] - Mv
    # (1 - a) M + a w is exact at a = 0 and a = 1, unlike M + a (w - M)
    out = (1.0 - a) * Mv + a * wv[..., None, :]
    tape = _tape_of(M, alpha, w)
    if tape is None:
        return out
    need = [isinstance(v, Node) for v in (M, alpha, w)]

    def backward(G):
        gM = _unbroadcast(G * (1.0 - a), np.shape(Mv)) if need[0] else None
        galpha = _unbroadcast(np.sum(G * diff, axis=-1), np.shape(av)) if need[1] else None
        gw = _unbroadcast(np.sum(G * a, axis=-2), np.shape(wv)) if need[2] else None
        return gM, galpha, gw

    return tape.record("convex_write", out, _parents(M, alpha, w), backward)

def forward_backward(graph, params, *inputs, check_finite=True):
    """Run ``graph(p, *inputs)`` on a fresh tape and accumulate parameter grads.

    ``graph`` returns either a scalar loss node or a tuple whose first entry is
    the loss. Gradients are *added* into ``params``; callers zero them first.
    Returns the forward outputs as plain arrays, in the same structure.
    """
    tape = Tape(check_finite=check_finite)
    leaves = tape.watch(params)
    out = graph(leaves, *inputs)
    loss = out[0] if isinstance(out, tuple) else out
    if not isinstance(loss, Node):
        loss = tape.leaf(loss)
    tape.backward(loss)
    tape.accumulate(leaves, params)
    if isinstance(out, tuple):
        return tuple(_val(o) if isinstance(o, Node) else o for o in out)
    return _val(out)
