"""Differentiable kernels.

Every kernel computes its forward value with numpy and, when a tape is
recording and some input requires a gradient, registers an exact analytic
backward rule.  Weight matrices use the row-vector convention
``y = x @ W`` with ``W`` of shape ``(in, out)``.
"""

from __future__ import annotations

import numpy as np

from .tensor import DTYPE, ShapeError, Tape, Tensor, constant


def _tracking(*inputs):
    tape = Tape._active
    if tape is None:
        return None
    for t in inputs:
        if t.requires_grad:
            return tape
    return None


def _unbroadcast(g, shape):
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _broadcast_check(op, a, b):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from None


# -- elementwise -----------------------------------------------------------

def add(a, b):
    a, b = constant(a), constant(b)
    _broadcast_check("add", a, b)
    out = Tensor(a.value + b.value)
    tape = _tracking(a, b)
    if tape is not None:
        def backward(g):
            if a.requires_grad:
                a.accumulate(_unbroadcast(g, a.shape))
            if b.requires_grad:
                b.accumulate(_unbroadcast(g, b.shape))
        tape.record(out, (a, b), backward)
    return out


def sub(a, b):
    a, b = constant(a), constant(b)
    _broadcast_check("sub", a, b)
    out = Tensor(a.value - b.value)
    tape = _tracking(a, b)
    if tape is not None:
        def backward(g):
            if a.requires_grad:
                a.accumulate(_unbroadcast(g, a.shape))
            if b.requires_grad:
                b.accumulate(-_unbroadcast(g, b.shape))
        tape.record(out, (a, b), backward)
    return out


def mul(a, b):
    a, b = constant(a), constant(b)
    _broadcast_check("mul", a, b)
    out = Tensor(a.value * b.value)
    tape = _tracking(a, b)
    if tape is not None:
        av, bv = a.value, b.value

        def backward(g):
            if a.requires_grad:
                a.accumulate(_unbroadcast(g * bv, a.shape))
            if b.requires_grad:
                b.accumulate(_unbroadcast(g * av, b.shape))
        tape.record(out, (a, b), backward)
    return out


def scale(a, s):
    s = float(s)
    out = Tensor(a.value * s)
    tape = _tracking(a)
    if tape is not None:
        tape.record(out, (a,), lambda g: a.accumulate(g * s))
    return out


def sigmoid(a):
    y = 0.5 * (1.0 + np.tanh(0.5 * a.value))
    out = Tensor(y)
    tape = _tracking(a)
    if tape is not None:
        tape.record(out, (a,), lambda g: a.accumulate(g * y * (1.0 - y)))
    return out


def tanh(a):
    y = np.tanh(a.value)
    out = Tensor(y)
    tape = _tracking(a)
    if tape is not None:
        tape.record(out, (a,), lambda g: a.accumulate(g * (1.0 - y * y)))
    return out


def relu(a):
    pos = a.value > 0
    out = Tensor(np.where(pos, a.value, 0.0))
    tape = _tracking(a)
    if tape is not None:
        tape.record(out, (a,), lambda g: a.accumulate(g * pos))
    return out


def square(a):
    av = a.value
    out = Tensor(av * av)
    tape = _tracking(a)
    if tape is not None:
        tape.record(out, (a,), lambda g: a.accumulate(2.0 * g * av))
    return out


# -- linear algebra ----------------------------------------------------------

def matmul(a, b):
    """``a @ b`` for 2-D operands."""
    a, b = constant(a), constant(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    out = Tensor(a.value @ b.value)
    tape = _tracking(a, b)
    if tape is not None:
        av, bv = a.value, b.value

        def backward(g):
            if a.requires_grad:
                a.accumulate(g @ bv.T)
            if b.requires_grad:
                b.accumulate(av.T @ g)
        tape.record(out, (a, b), backward)
    return out


def inner(a, q):
    """Inner product of each row of ``a`` (B, K, D) with ``q`` (B, D) -> (B, K)."""
    a, q = constant(a), constant(q)
    if a.ndim != 3 or q.ndim != 2 or a.shape[0] != q.shape[0] or a.shape[2] != q.shape[1]:
        raise ShapeError(f"inner: incompatible shapes {a.shape} and {q.shape}")
    av, qv = a.value, q.value
    out = Tensor(np.einsum("bkd,bd->bk", av, qv))
    tape = _tracking(a, q)
    if tape is not None:
        def backward(g):
            if a.requires_grad:
                a.accumulate(g[:, :, None] * qv[:, None, :])
            if q.requires_grad:
                q.accumulate(np.einsum("bk,bkd->bd", g, av))
        tape.record(out, (a, q), backward)
    return out


def weighted_sum(w, v):
    """Attention read-out: ``w`` (B, K) over ``v`` (B, K, D) -> (B, D)."""
    w, v = constant(w), constant(v)
    if w.ndim != 2 or v.ndim != 3 or w.shape != v.shape[:2]:
        raise ShapeError(f"weighted_sum: incompatible shapes {w.shape} and {v.shape}")
    wv, vv = w.value, v.value
    out = Tensor(np.einsum("bk,bkd->bd", wv, vv))
    tape = _tracking(w, v)
    if tape is not None:
        def backward(g):
            if w.requires_grad:
                w.accumulate(np.einsum("bd,bkd->bk", g, vv))
            if v.requires_grad:
                v.accumulate(wv[:, :, None] * g[:, None, :])
        tape.record(out, (w, v), backward)
    return out


# -- shape manipulation ------------------------------------------------------

def concat(tensors, axis=-1):
    tensors = [constant(t) for t in tensors]
    try:
        value = np.concatenate([t.value for t in tensors], axis=axis)
    except ValueError:
        shapes = [t.shape for t in tensors]
        raise ShapeError(f"concat: incompatible shapes {shapes} on axis {axis}") from None
    out = Tensor(value)
    tape = _tracking(*tensors)
    if tape is not None:
        bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

        def backward(g):
            for t, piece in zip(tensors, np.split(g, bounds, axis=axis)):
                if t.requires_grad:
                    t.accumulate(piece)
        tape.record(out, tuple(tensors), backward)
    return out


def reshape(a, shape):
    try:
        value = a.value.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot reshape {a.shape} to {shape}") from None
    out = Tensor(value)
    tape = _tracking(a)
    if tape is not None:
        src = a.shape
        tape.record(out, (a,), lambda g: a.accumulate(g.reshape(src)))
    return out


def index(a, key):
    """``a[key]`` for basic or integer-array indexing."""
    out = Tensor(a.value[key])
    tape = _tracking(a)
    if tape is not None:
        parts = key if isinstance(key, tuple) else (key,)
        fancy = any(isinstance(k, (np.ndarray, list)) for k in parts)

        def backward(g):
            full = np.zeros_like(a.value)
            if fancy:
                np.add.at(full, key, g)
            else:
                full[key] += g
            a.accumulate(full)
        tape.record(out, (a,), backward)
    return out


def pick(a, idx):
    """Select one entry per row: ``a`` (B, K), ``idx`` (B,) -> (B,)."""
    idx = np.asarray(idx, dtype=np.intp)
    if a.ndim != 2 or idx.shape != (a.shape[0],):
        raise ShapeError(f"pick: incompatible shapes {a.shape} and {idx.shape}")
    return index(a, (np.arange(a.shape[0]), idx))


def total(a):
    """Sum of all entries as a 0-d tensor."""
    out = Tensor(a.value.sum())
    tape = _tracking(a)
    if tape is not None:
        tape.record(out, (a,), lambda g: a.accumulate(np.broadcast_to(g, a.shape)))
    return out


def row_sum(a):
    """Sum over the last axis."""
    out = Tensor(a.value.sum(axis=-1))
    tape = _tracking(a)
    if tape is not None:
        tape.record(out, (a,), lambda g: a.accumulate(np.broadcast_to(g[..., None], a.shape)))
    return out


# -- normalisation and attention ----------------------------------------------

def _check_mask(op, x, mask):
    if mask is None:
        return None
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != x.shape:
        raise ShapeError(f"{op}: mask shape {mask.shape} does not match {x.shape}")
    if not mask.any(axis=-1).all():
        raise ValueError(f"{op}: a row has no valid entries")
    return mask


def softmax(x, mask=None):
    """Row softmax over the last axis; masked-out entries get exactly 0."""
    mask = _check_mask("softmax", x, mask)
    z = x.value if mask is None else np.where(mask, x.value, -np.inf)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=-1, keepdims=True)
    out = Tensor(p)
    tape = _tracking(x)
    if tape is not None:
        def backward(g):
            x.accumulate(p * (g - (g * p).sum(axis=-1, keepdims=True)))
        tape.record(out, (x,), backward)
    return out


def log_softmax(x, mask=None):
    """Row log-softmax; masked-out entries hold 0 and receive no gradient."""
    mask = _check_mask("log_softmax", x, mask)
    z = x.value if mask is None else np.where(mask, x.value, -np.inf)
    z = z - z.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    logp = z - lse
    p = np.exp(logp)
    if mask is not None:
        logp = np.where(mask, logp, 0.0)
    out = Tensor(logp)
    tape = _tracking(x)
    if tape is not None:
        def backward(g):
            if mask is not None:
                g = np.where(mask, g, 0.0)
            x.accumulate(g - p * g.sum(axis=-1, keepdims=True))
        tape.record(out, (x,), backward)
    return out


def embedding(table, ids):
    ids = np.asarray(ids, dtype=np.intp)
    if table.ndim != 2:
        raise ShapeError(f"embedding: table must be 2-D, got {table.shape}")
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise ShapeError(f"embedding: ids outside [0, {table.shape[0]})")
    out = Tensor(table.value[ids])
    tape = _tracking(table)
    if tape is not None:
        def backward(g):
            full = np.zeros_like(table.value)
            np.add.at(full, ids, g)
            table.accumulate(full)
        tape.record(out, (table,), backward)
    return out


def dropout(x, p, rng, train):
    """Inverted dropout; identity when ``train`` is false or ``p`` is 0."""
    if not train or p <= 0.0:
        return x
    keep = (rng.random(x.shape) >= p) / (1.0 - p)
    return mul(x, Tensor(keep))


class RunningStats:
    """Running mean/variance buffers for ``batch_standardize``."""

    def __init__(self, dim, momentum=0.1, eps=1e-5):
        self.mean = np.zeros(dim, dtype=DTYPE)
        self.var = np.ones(dim, dtype=DTYPE)
        self.momentum = momentum
        self.eps = eps


def batch_standardize(x, gamma, beta, stats, train, row_mask=None):
    """Per-feature standardisation of ``x`` (N, D) with a learnable affine.

    In training, statistics come from the rows selected by ``row_mask``
    (all rows by default) and the running buffers are updated.  With
    fewer than two selected rows, or outside training, the running
    statistics are used.
    """
    if x.ndim != 2 or gamma.shape != (x.shape[1],) or beta.shape != (x.shape[1],):
        raise ShapeError(
            f"batch_standardize: shapes x={x.shape} gamma={gamma.shape} beta={beta.shape}")
    xv = x.value
    sel = np.ones(xv.shape[0], dtype=bool) if row_mask is None else np.asarray(row_mask, bool)
    n = int(sel.sum())
    use_batch = train and n >= 2
    if use_batch:
        xs = xv[sel]
        mu = xs.mean(axis=0)
        var = xs.var(axis=0)
        m = stats.momentum
        stats.mean = (1.0 - m) * stats.mean + m * mu
        stats.var = (1.0 - m) * stats.var + m * var * n / (n - 1)
    else:
        mu, var = stats.mean, stats.var
    r = 1.0 / np.sqrt(var + stats.eps)
    centered = xv - mu
    xhat = centered * r
    out = Tensor(xhat * gamma.value + beta.value)
    tape = _tracking(x, gamma, beta)
    if tape is not None:
        gv = gamma.value

        def backward(g):
            if gamma.requires_grad:
                gamma.accumulate((g * xhat).sum(axis=0))
            if beta.requires_grad:
                beta.accumulate(g.sum(axis=0))
            if not x.requires_grad:
                return
            dxhat = g * gv
            dx = dxhat * r
            if use_batch:
                d_r = (dxhat * centered).sum(axis=0)
                d_var = d_r * (-0.5 * r ** 3)
                d_mu = -r * dxhat.sum(axis=0)
                dx = dx + sel[:, None] * (d_var * 2.0 * centered / n + d_mu / n)
            x.accumulate(dx)
        tape.record(out, (x, gamma, beta), backward)
    return out


# -- recurrent cell ------------------------------------------------------------

def lstm_fused(x, h, c, weight, bias):
    """One LSTM step returning ``[h_new, c_new]`` packed along the last axis.

    Gate layout in ``weight`` (I + H, 4H) and ``bias`` (4H,): input, forget,
    output, candidate.
    """
    hidden = h.shape[-1]
    if (x.ndim != 2 or h.shape != c.shape or h.shape[0] != x.shape[0]
            or weight.shape != (x.shape[1] + hidden, 4 * hidden) or bias.shape != (4 * hidden,)):
        raise ShapeError(
            f"lstm_cell: x={x.shape} h={h.shape} c={c.shape} W={weight.shape} b={bias.shape}")
    xh = np.concatenate([x.value, h.value], axis=1)
    a = xh @ weight.value + bias.value
    H = hidden
    i = 0.5 * (1.0 + np.tanh(0.5 * a[:, :H]))
    f = 0.5 * (1.0 + np.tanh(0.5 * a[:, H:2 * H]))
    o = 0.5 * (1.0 + np.tanh(0.5 * a[:, 2 * H:3 * H]))
    cand = np.tanh(a[:, 3 * H:])
    c_prev = c.value
    c_new = f * c_prev + i * cand
    tc = np.tanh(c_new)
    h_new = o * tc
    out = Tensor(np.concatenate([h_new, c_new], axis=1))
    tape = _tracking(x, h, c, weight, bias)
    if tape is not None:
        W = weight.value
        nx = x.shape[1]

        def backward(g):
            gh, gc = g[:, :H], g[:, H:]
            dc = gc + gh * o * (1.0 - tc * tc)
            da = np.concatenate([
                dc * cand * i * (1.0 - i),
                dc * c_prev * f * (1.0 - f),
                gh * tc * o * (1.0 - o),
                dc * i * (1.0 - cand * cand),
            ], axis=1)
            if weight.requires_grad:
                weight.accumulate(xh.T @ da)
            if bias.requires_grad:
                bias.accumulate(da.sum(axis=0))
            if x.requires_grad or h.requires_grad:
                dxh = da @ W.T
                if x.requires_grad:
                    x.accumulate(dxh[:, :nx])
                if h.requires_grad:
                    h.accumulate(dxh[:, nx:])
            if c.requires_grad:
                c.accumulate(dc * f)
        tape.record(out, (x, h, c, weight, bias), backward)
    return out


def lstm_cell(x, h, c, weight, bias):
    """Standard LSTM cell. Returns ``(h_new, c_new)``."""
    hc = lstm_fused(constant(x), constant(h), constant(c), weight, bias)
    H = h.shape[-1]
    return index(hc, (slice(None), slice(0, H))), index(hc, (slice(None), slice(H, None)))
