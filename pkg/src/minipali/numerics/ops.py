"""Differentiable dense ops.

Every op computes its output from plain arrays, checks it for non-finite
values, and records itself on the active tape when one of its inputs
depends on a watched parameter.
"""

from __future__ import annotations

import builtins
import math

import numpy as np
from scipy.special import erf

from .tensor import DEFAULT_DTYPE, Node, NonFiniteError, ShapeError, Tensor, active_tape


def _t(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else DEFAULT_DTYPE
    return Tensor._wrap(np.asarray(x, dtype=dtype))


def _apply(op: str, inputs: tuple[Tensor, ...], forward, vjp) -> Tensor:
    with np.errstate(over="ignore", invalid="ignore"):
        out = np.asarray(forward(*(x.data for x in inputs)))
    if out.dtype.kind == "f" and not np.isfinite(out).all():
        raise NonFiniteError(f"{op}: produced non-finite values")
    result = Tensor._wrap(out)
    tape = active_tape()
    if tape is not None:
        needs = tuple(tape.tracks(x) for x in inputs)
        if builtins.any(needs):
            tape.record(Node(op, inputs, result, forward, lambda g, nd: vjp(g, nd, out), needs))
    return result


def unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``g`` down to ``shape`` after numpy broadcasting."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _broadcast_shape(op, a: Tensor, b: Tensor):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(op, a.shape, b.shape) from None


# -- elementwise -----------------------------------------------------------

def add(a, b) -> Tensor:
    a = _t(a, b if isinstance(b, Tensor) else None)
    b = _t(b, a)
    _broadcast_shape("add", a, b)
    sa, sb = a.shape, b.shape

    def vjp(g, needs, out):
        return (unbroadcast(g, sa) if needs[0] else None,
                unbroadcast(g, sb) if needs[1] else None)

    return _apply("add", (a, b), np.add, vjp)


def sub(a, b) -> Tensor:
    a = _t(a, b if isinstance(b, Tensor) else None)
    b = _t(b, a)
    _broadcast_shape("sub", a, b)
    sa, sb = a.shape, b.shape

    def vjp(g, needs, out):
        return (unbroadcast(g, sa) if needs[0] else None,
                unbroadcast(-g, sb) if needs[1] else None)

    return _apply("sub", (a, b), np.subtract, vjp)


def mul(a, b) -> Tensor:
    a = _t(a, b if isinstance(b, Tensor) else None)
    b = _t(b, a)
    _broadcast_shape("mul", a, b)
    x, y = a.data, b.data

    def vjp(g, needs, out):
        return (unbroadcast(g * y, x.shape) if needs[0] else None,
                unbroadcast(g * x, y.shape) if needs[1] else None)

    return _apply("mul", (a, b), np.multiply, vjp)


_SQRT_HALF = 1.0 / math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


def gelu(a) -> Tensor:
    """Exact (erf-based) GELU."""
    a = _t(a)
    x = a.data

    def fwd(v):
        return 0.5 * v * (1.0 + erf(v * _SQRT_HALF))

    def vjp(g, needs, out):
        cdf = 0.5 * (1.0 + erf(x * _SQRT_HALF))
        pdf = _INV_SQRT_2PI * np.exp(-0.5 * x * x)
        return (g * (cdf + x * pdf),)

    return _apply("gelu", (a,), fwd, vjp)


def exp(a) -> Tensor:
    a = _t(a)
    return _apply("exp", (a,), np.exp, lambda g, needs, out: (g * out,))


# -- shape manipulation ----------------------------------------------------

def reshape(a, shape) -> Tensor:
    a = _t(a)
    shape = tuple(shape)
    src = a.shape
    try:
        np.empty(src, dtype=np.int8).reshape(shape)
    except ValueError:
        raise ShapeError("reshape", src, shape) from None
    return _apply("reshape", (a,), lambda v: v.reshape(shape),
                  lambda g, needs, out: (g.reshape(src),))


def transpose(a, axes=None) -> Tensor:
    a = _t(a)
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    axes = tuple(axes)
    if sorted(axes) != list(range(a.ndim)):
        raise ShapeError("transpose", a.shape, axes)
    inv = tuple(np.argsort(axes))
    return _apply("transpose", (a,), lambda v: np.transpose(v, axes),
                  lambda g, needs, out: (np.transpose(g, inv),))


def swap_last(a) -> Tensor:
    axes = list(range(a.ndim))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return transpose(a, axes)


def getitem(a, index) -> Tensor:
    a = _t(a)
    src_shape, dtype = a.shape, a.dtype

    def vjp(g, needs, out):
        full = np.zeros(src_shape, dtype=dtype)
        np.add.at(full, index, g)
        return (full,)

    return _apply("slice", (a,), lambda v: np.array(v[index]), vjp)


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = tuple(_t(x) for x in tensors)
    if not tensors:
        raise ValueError("concat: need at least one tensor")
    ref = tensors[0]
    nd = ref.ndim
    ax = axis % nd
    for t in tensors[1:]:
        if t.ndim != nd or builtins.any(t.shape[i] != ref.shape[i] for i in range(nd) if i != ax):
            raise ShapeError("concat", ref.shape, t.shape)
    bounds = np.cumsum([0] + [t.shape[ax] for t in tensors])

    def fwd(*arrays):
        return np.concatenate(arrays, axis=ax)

    def vjp(g, needs, out):
        parts = []
        for i, need in enumerate(needs):
            if not need:
                parts.append(None)
                continue
            sl = [slice(None)] * nd
            sl[ax] = slice(bounds[i], bounds[i + 1])
            parts.append(g[tuple(sl)])
        return tuple(parts)

    return _apply("concat", tensors, fwd, vjp)


# -- reductions ------------------------------------------------------------

def _norm_axis(axis, nd):
    if axis is None:
        return tuple(range(nd))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % nd for a in axis)


def sum(a, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    a = _t(a)
    src = a.shape
    axes = _norm_axis(axis, a.ndim)

    def vjp(g, needs, out):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, src).copy(),)

    return _apply("sum", (a,), lambda v: np.sum(v, axis=axes, keepdims=keepdims), vjp)


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _t(a)
    src = a.shape
    axes = _norm_axis(axis, a.ndim)
    count = int(np.prod([src[i] for i in axes])) if axes else 1

    def vjp(g, needs, out):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g / count, src).copy(),)

    return _apply("mean", (a,), lambda v: np.mean(v, axis=axes, keepdims=keepdims), vjp)


# -- linear algebra --------------------------------------------------------

def matmul(a, b) -> Tensor:
    a, b = _t(a), _t(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError("matmul", a.shape, b.shape)
    try:
        np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except ValueError:
        raise ShapeError("matmul", a.shape, b.shape) from None
    x, y = a.data, b.data

    def vjp(g, needs, out):
        ga = unbroadcast(np.matmul(g, np.swapaxes(y, -1, -2)), x.shape) if needs[0] else None
        gb = unbroadcast(np.matmul(np.swapaxes(x, -1, -2), g), y.shape) if needs[1] else None
        return ga, gb

    return _apply("matmul", (a, b), np.matmul, vjp)


def linear(x, w, b=None) -> Tensor:
    """``x @ w (+ b)`` for x of shape [..., in] and w of shape [in, out]."""
    x, w = _t(x), _t(w)
    if w.ndim != 2 or x.shape[-1] != w.shape[0]:
        raise ShapeError("linear", x.shape, w.shape)
    lead = x.shape[:-1]
    y = matmul(reshape(x, (-1, w.shape[0])), w)
    if b is not None:
        y = add(y, b)
    return reshape(y, lead + (w.shape[1],))


# -- normalisation and probabilities ---------------------------------------

def _masked(v, mask):
    if mask is None:
        return v
    return np.where(mask, v, -np.inf)


def softmax(a, axis: int = -1, mask: np.ndarray | None = None) -> Tensor:
    """Softmax along ``axis``; entries where boolean ``mask`` is False get weight 0."""
    a = _t(a)
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        try:
            np.broadcast_shapes(mask.shape, a.shape)
        except ValueError:
            raise ShapeError("softmax", a.shape, mask.shape) from None

    def fwd(v):
        v = _masked(v, mask)
        m = np.max(v, axis=axis, keepdims=True)
        e = np.exp(v - m)
        return e / np.sum(e, axis=axis, keepdims=True)

    def vjp(g, needs, out):
        return (out * (g - np.sum(g * out, axis=axis, keepdims=True)),)

    return _apply("softmax", (a,), fwd, vjp)


def log_softmax(a, axis: int = -1) -> Tensor:
    a = _t(a)

    def fwd(v):
        m = np.max(v, axis=axis, keepdims=True)
        s = v - m
        return s - np.log(np.sum(np.exp(s), axis=axis, keepdims=True))

    def vjp(g, needs, out):
        return (g - np.exp(out) * np.sum(g, axis=axis, keepdims=True),)

    return _apply("log_softmax", (a,), fwd, vjp)


def layer_norm(a, scale=None, shift=None, eps: float = 1e-6) -> Tensor:
    """Normalise over the last axis, then apply optional per-feature scale and shift."""
    if not eps > 0:
        raise ValueError("layer_norm: eps must be positive")
    a = _t(a)
    d = a.shape[-1]
    for p in (scale, shift):
        if p is not None and tuple(p.shape) != (d,):
            raise ShapeError("layer_norm", a.shape, p.shape)

    def normalize(v):
        mu = v.mean(axis=-1, keepdims=True)
        xc = v - mu
        var = (xc * xc).mean(axis=-1, keepdims=True)
        return xc / np.sqrt(var + eps), var

    def fwd(v, *params):
        y, _ = normalize(v)
        if scale is not None:
            y = y * params[0]
        if shift is not None:
            y = y + params[-1]
        return y

    x = a.data

    def vjp(g, needs, out):
        xhat, var = normalize(x)
        rstd = 1.0 / np.sqrt(var + eps)
        res = []
        gy = g
        if scale is not None:
            gy = g * scale.data
        if needs[0]:
            gmean = gy.mean(axis=-1, keepdims=True)
            gxh = (gy * xhat).mean(axis=-1, keepdims=True)
            res.append(rstd * (gy - gmean - xhat * gxh))
        else:
            res.append(None)
        k = 1
        if scale is not None:
            res.append((g * xhat).reshape(-1, d).sum(axis=0) if needs[k] else None)
            k += 1
        if shift is not None:
            res.append(g.reshape(-1, d).sum(axis=0) if needs[k] else None)
        return tuple(res)

    inputs = (a,) + tuple(_t(p) for p in (scale, shift) if p is not None)
    return _apply("layer_norm", inputs, fwd, vjp)


def embedding(table, ids) -> Tensor:
    """Rows of ``table`` indexed by integer array ``ids``."""
    table = _t(table)
    ids = np.asarray(ids)
    if ids.dtype.kind not in "iu":
        raise TypeError("embedding: ids must be integers")
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise IndexError(f"embedding: id out of range for table with {table.shape[0]} rows")
    shape, dtype = table.shape, table.dtype

    def vjp(g, needs, out):
        full = np.zeros(shape, dtype=dtype)
        np.add.at(full, ids.reshape(-1), g.reshape(-1, shape[1]))
        return (full,)

    return _apply("embedding", (table,), lambda t: t[ids], vjp)


def cross_entropy(logits, labels, ignore_index: int = -1) -> Tensor:
    """Mean token cross-entropy of ``logits`` [..., V] against integer ``labels`` [...].

    Positions whose label equals ``ignore_index`` are excluded from the mean.
    """
    logits = _t(logits)
    labels = np.asarray(labels)
    if labels.shape != logits.shape[:-1]:
        raise ShapeError("cross_entropy", logits.shape, labels.shape)
    V = logits.shape[-1]
    flat = labels.reshape(-1)
    keep = flat != ignore_index
    n = int(keep.sum())
    if n == 0:
        raise ValueError("cross_entropy: every label is ignored")
    safe = np.where(keep, flat, 0)
    if safe.min() < 0 or safe.max() >= V:
        raise IndexError("cross_entropy: label outside vocabulary")
    rows = np.arange(flat.size)

    def logp(v):
        z = v.reshape(-1, V)
        m = z.max(axis=1, keepdims=True)
        s = z - m
        return s - np.log(np.exp(s).sum(axis=1, keepdims=True))

    def fwd(v):
        lp = logp(v)
        return np.asarray(-(lp[rows, safe] * keep).sum() / n, dtype=v.dtype)

    x = logits.data

    def vjp(g, needs, out):
        p = np.exp(logp(x))
        p[rows, safe] -= 1.0
        p *= (keep / n)[:, None]
        return ((g * p).reshape(x.shape),)

    return _apply("cross_entropy", (logits,), fwd, vjp)


def dropout(a, rate: float, rng: np.random.Generator | None) -> Tensor:
    """Inverted dropout; identity when ``rng`` is None or rate is 0."""
    a = _t(a)
    if rng is None or rate <= 0.0:
        return a
    keep = (rng.random(a.shape) >= rate).astype(a.dtype) / (1.0 - rate)
    return mul(a, Tensor._wrap(keep))


def scaled_dot_product_attention(q, k, v, mask=None, bias=None, return_weights: bool = False):
    """Attention over the last two axes: q [..., Tq, d], k [..., Tk, d], v [..., Tk, dv].

    ``mask`` is boolean and broadcastable to [..., Tq, Tk]; False blocks a key.
    ``bias`` is an additive tensor broadcastable to the same shape.
    """
    q, k, v = _t(q), _t(k), _t(v)
    if q.shape[-1] != k.shape[-1] or k.shape[-2] != v.shape[-2]:
        raise ShapeError("attention", q.shape, k.shape, v.shape)
    scores = mul(matmul(q, swap_last(k)), 1.0 / math.sqrt(q.shape[-1]))
    if bias is not None:
        scores = add(scores, bias)
    weights = softmax(scores, axis=-1, mask=mask)
    out = matmul(weights, v)
    return (out, weights) if return_weights else out
