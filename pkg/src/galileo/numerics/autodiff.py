"""Tape-based reverse-mode differentiation over numpy arrays.

Operations are recorded only while a :class:`Graph` is active and at least
one input requires a gradient; outside a graph every op is a plain numpy
evaluation, which is how the EMA target encoder and evaluation run.

    with Graph() as g:
        loss = some_function(params)
    grads = backward(g, loss)
"""

import numpy as np

from galileo.errors import ContractError
from galileo.numerics import kernels

_ACTIVE = []


class Graph:
    """Recorded primitive applications for one forward pass, in execution order."""

    def __init__(self):
        self.nodes = []

    def __enter__(self):
        _ACTIVE.append(self)
        return self

    def __exit__(self, *exc):
        _ACTIVE.remove(self)
        return False

    def __len__(self):
        return len(self.nodes)


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "name")

    __array_priority__ = 100

    def __init__(self, data, requires_grad=False, name=None):
        self.data = data if isinstance(data, np.ndarray) else np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad = None
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self):
        return self.data

    def __repr__(self):
        tag = f" {self.name!r}" if self.name else ""
        return f"Tensor{tag}(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"

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

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        return transpose(self, axes)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)


def as_tensor(x, like=None):
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    return Tensor(np.asarray(x, dtype=dtype))


def _pair(a, b):
    # constants adopt the tensor operand's dtype so float32 graphs stay float32
    like = a if isinstance(a, Tensor) else b if isinstance(b, Tensor) else None
    return as_tensor(a, like), as_tensor(b, like)


def _record(out_data, parents, backward_fn):
    tracking = bool(_ACTIVE) and any(p.requires_grad for p in parents)
    out = Tensor(out_data, requires_grad=tracking)
    if tracking:
        _ACTIVE[-1].nodes.append((out, parents, backward_fn))
    return out


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


def backward(graph, loss):
    """Gradients of scalar ``loss`` with respect to every leaf that requires one.

    Returns ``{leaf_tensor: gradient}`` and also stores each gradient on
    ``leaf.grad`` (accumulating into an existing buffer).
    """
    if not isinstance(loss, Tensor) or loss.data.size != 1:
        raise ContractError("backward needs a scalar loss tensor")
    if not loss.requires_grad:
        raise ContractError("loss does not depend on any tensor requiring a gradient")
    grads = {id(loss): np.ones_like(loss.data)}
    produced = set()
    holders = {}
    for out, parents, fn in reversed(graph.nodes):
        produced.add(id(out))
        g = grads.pop(id(out), None)
        if g is None:
            continue
        for p, pg in zip(parents, fn(g)):
            if pg is None or not p.requires_grad:
                continue
            key = id(p)
            holders[key] = p
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg
    result = {}
    for key, g in grads.items():
        if key in produced or key not in holders:
            continue
        leaf = holders[key]
        g = g.astype(leaf.dtype, copy=False)
        leaf.grad = g if leaf.grad is None else leaf.grad + g
        result[leaf] = g
    return result


# ---------------------------------------------------------------- elementwise

def add(a, b):
    a, b = _pair(a, b)
    sa, sb = a.shape, b.shape
    return _record(a.data + b.data, (a, b),
                   lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b):
    a, b = _pair(a, b)
    sa, sb = a.shape, b.shape
    return _record(a.data - b.data, (a, b),
                   lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a, b):
    a, b = _pair(a, b)
    ad, bd = a.data, b.data
    return _record(ad * bd, (a, b),
                   lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)))


def div(a, b):
    a, b = _pair(a, b)
    ad, bd = a.data, b.data
    out = ad / bd
    return _record(out, (a, b),
                   lambda g: (_unbroadcast(g / bd, ad.shape),
                              _unbroadcast(-g * out / bd, bd.shape)))


def gelu(x):
    """tanh-approximated GELU."""
    flat = np.ascontiguousarray(x.data.reshape(-1, x.shape[-1]))
    out = kernels.gelu_fwd(flat).reshape(x.shape)

    def bwd(g):
        gf = np.ascontiguousarray(g.reshape(flat.shape))
        return (kernels.gelu_bwd(gf, flat).reshape(x.shape),)

    return _record(out, (x,), bwd)


# ---------------------------------------------------------------- shape ops

def reshape(x, shape):
    src = x.shape
    return _record(x.data.reshape(shape), (x,), lambda g: (g.reshape(src),))


def transpose(x, axes):
    axes = tuple(axes) if axes else tuple(reversed(range(x.ndim)))
    inv = tuple(np.argsort(axes))
    return _record(x.data.transpose(axes), (x,), lambda g: (g.transpose(inv),))


def swap_last(x):
    axes = list(range(x.ndim))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return transpose(x, axes)


def concat(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    cuts = np.cumsum(sizes)[:-1]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    return _record(out, tuple(tensors), lambda g: tuple(np.split(g, cuts, axis=axis)))


def take(table, idx):
    """Row lookup ``table[idx]`` for a 2D table and an integer index array."""
    idx = np.asarray(idx)
    n = table.shape[0]

    def bwd(g):
        flat_g = g.reshape(-1, table.shape[1])
        out = np.zeros_like(table.data)
        np.add.at(out, idx.reshape(-1), flat_g)
        return (out,)

    if idx.size and (idx.min() < 0 or idx.max() >= n):
        raise ContractError("take: index out of range")
    return _record(table.data[idx], (table,), bwd)


def gather_rows(x, idx):
    """``out[b, k] = x[b, idx[b, k]]`` for x of shape [B, L, D] and idx [B, K].

    A 2D ``x`` with 1D ``idx`` is treated as a batch of one.
    """
    idx = np.asarray(idx, dtype=np.int64)
    if x.ndim == 2:
        if idx.ndim != 1:
            raise ContractError("gather_rows: 2D input needs a 1D index")
        out = x.data[idx]
        n = x.shape[0]

        def bwd2(g):
            res = np.zeros_like(x.data)
            np.add.at(res, idx, g)
            return (res,)

        return _record(out, (x,), bwd2)
    B, L, D = x.shape
    if idx.ndim != 2 or idx.shape[0] != B:
        raise ContractError("gather_rows: index must be [B, K]")
    out = np.take_along_axis(x.data, idx[:, :, None], axis=1)
    flat = (idx + (np.arange(B) * L)[:, None]).reshape(-1)

    def bwd(g):
        res = np.zeros((B * L, D), dtype=x.dtype)
        np.add.at(res, flat, g.reshape(-1, D))
        return (res.reshape(B, L, D),)

    return _record(out, (x,), bwd)


# ---------------------------------------------------------------- reductions

def tsum(x, axis=None, keepdims=False):
    shape = x.shape
    out = np.sum(x.data, axis=axis, keepdims=keepdims)

    def bwd(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _record(np.asarray(out), (x,), bwd)


def mean(x, axis=None, keepdims=False):
    n = x.data.size if axis is None else np.prod([x.shape[a] for a in np.atleast_1d(axis)])
    return mul(tsum(x, axis, keepdims), 1.0 / n)


# ---------------------------------------------------------------- linear algebra

def matmul(a, b):
    a, b = _pair(a, b)
    if a.ndim < 2 or b.ndim < 2:
        raise ContractError("matmul needs operands with at least 2 dims")
    if a.shape[-1] != b.shape[-2]:
        raise ContractError(f"matmul shape mismatch {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data

    def bwd(g):
        ga = g @ np.swapaxes(bd, -1, -2) if a.requires_grad else None
        gb = np.swapaxes(ad, -1, -2) @ g if b.requires_grad else None
        return (None if ga is None else _unbroadcast(ga, ad.shape),
                None if gb is None else _unbroadcast(gb, bd.shape))

    return _record(ad @ bd, (a, b), bwd)


def diagonal(x):
    """Main diagonal of the last two (square) axes."""
    n = x.shape[-1]
    if x.shape[-2] != n:
        raise ContractError("diagonal needs square trailing axes")
    out = np.diagonal(x.data, axis1=-2, axis2=-1).copy()

    def bwd(g):
        res = np.zeros_like(x.data)
        ii = np.arange(n)
        res[..., ii, ii] = g
        return (res,)

    return _record(out, (x,), bwd)


# ---------------------------------------------------------------- fused row ops

def softmax(x, scale=1.0):
    """Softmax of ``scale * x`` over the last axis."""
    flat = np.ascontiguousarray(x.data.reshape(-1, x.shape[-1]))
    y = kernels.softmax_fwd(flat, scale)

    def bwd(g):
        gf = np.ascontiguousarray(g.reshape(y.shape))
        return (kernels.softmax_bwd(gf, y, scale).reshape(x.shape),)

    return _record(y.reshape(x.shape), (x,), bwd)


def logsumexp(x):
    """log-sum-exp over the last axis (drops that axis)."""
    xd = x.data
    m = xd.max(axis=-1, keepdims=True)
    e = np.exp(xd - m)
    s = e.sum(axis=-1, keepdims=True)
    out = (m + np.log(s))[..., 0]

    def bwd(g):
        return (g[..., None] * (e / s),)

    return _record(out, (x,), bwd)


def l2_normalize(x):
    """Rows divided by their Euclidean norm; zero rows are a contract violation."""
    xd = x.data
    n = np.sqrt(np.sum(xd * xd, axis=-1, keepdims=True))
    if np.any(n == 0):
        raise ContractError("l2_normalize: zero-norm row")
    y = xd / n

    def bwd(g):
        return ((g - y * np.sum(g * y, axis=-1, keepdims=True)) / n,)

    return _record(y, (x,), bwd)


def layer_norm(x, gamma, beta, eps=1e-6):
    if eps <= 0:
        raise ContractError("layer_norm needs eps > 0")
    d = x.shape[-1]
    flat = np.ascontiguousarray(x.data.reshape(-1, d))
    gd = np.ascontiguousarray(gamma.data, dtype=flat.dtype)
    bd = np.ascontiguousarray(beta.data, dtype=flat.dtype)
    y, mu, rstd = kernels.layer_norm_fwd(flat, gd, bd, eps)

    def bwd(g):
        gf = np.ascontiguousarray(g.reshape(flat.shape), dtype=flat.dtype)
        dx, dg, db = kernels.layer_norm_bwd(gf, flat, mu, rstd, gd)
        return dx.reshape(x.shape), dg, db

    return _record(y.reshape(x.shape), (x, gamma, beta), bwd)
