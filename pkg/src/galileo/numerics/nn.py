"""Transformer building blocks expressed with autodiff primitives.

Parameters are passed as a flat mapping ``name -> Tensor``; each layer
reads the entries under its ``prefix``. Inputs may be [L, D] or [B, L, D].
"""

import numpy as np

from galileo.errors import ConfigError, ContractError
from galileo.numerics import autodiff as ad


def linear(x, W, b=None):
    if W.ndim != 2 or x.shape[-1] != W.shape[0]:
        raise ContractError(f"linear: input {x.shape} does not match weight {W.shape}")
    if b is not None and b.shape != (W.shape[1],):
        raise ContractError(f"linear: bias {b.shape} does not match weight {W.shape}")
    out = ad.matmul(x, W)
    return out if b is None else ad.add(out, b)


def layer_norm(x, gamma, beta, eps=1e-6):
    return ad.layer_norm(x, gamma, beta, eps)


def _split_heads(x, heads):
    *lead, L, D = x.shape
    dh = D // heads
    x = ad.reshape(x, (*lead, L, heads, dh))
    n = x.ndim
    axes = list(range(n - 3)) + [n - 2, n - 3, n - 1]
    return ad.transpose(x, axes)


def _merge_heads(x):
    n = x.ndim
    axes = list(range(n - 3)) + [n - 2, n - 3, n - 1]
    x = ad.transpose(x, axes)
    *lead, L, H, dh = x.shape
    return ad.reshape(x, (*lead, L, H * dh))


def multi_head_attention(q, k, v, heads, params, prefix="", return_weights=False):
    """Scaled dot-product attention with per-head projections.

    ``params`` holds ``wq, bq, wk, bk, wv, bv, wo, bo`` under ``prefix``.
    Self-attention is the case ``q is k is v``.
    """
    D = q.shape[-1]
    if heads < 1 or D % heads:
        raise ConfigError(f"width {D} is not divisible by {heads} heads")
    p = lambda n: params[prefix + n]  # noqa: E731
    Q = _split_heads(linear(q, p("wq"), p("bq")), heads)
    K = _split_heads(linear(k, p("wk"), p("bk")), heads)
    V = _split_heads(linear(v, p("wv"), p("bv")), heads)
    scale = 1.0 / np.sqrt(D // heads)
    A = ad.softmax(ad.matmul(Q, ad.swap_last(K)), scale)
    out = linear(_merge_heads(ad.matmul(A, V)), p("wo"), p("bo"))
    return (out, A) if return_weights else out


def mlp(x, params, prefix=""):
    h = ad.gelu(linear(x, params[prefix + "w1"], params[prefix + "b1"]))
    return linear(h, params[prefix + "w2"], params[prefix + "b2"])


def _ln(x, params, name):
    return ad.layer_norm(x, params[name + ".g"], params[name + ".b"])


def transformer_block(x, params, prefix, heads):
    """Pre-norm block: x + attn(ln(x)), then x + mlp(ln(x))."""
    h = _ln(x, params, prefix + "ln1")
    x = ad.add(x, multi_head_attention(h, h, h, heads, params, prefix + "attn."))
    h = _ln(x, params, prefix + "ln2")
    return ad.add(x, mlp(h, params, prefix + "mlp."))


def cross_block(q, ctx, params, prefix, heads):
    """Predictor block: cross-attend to ``ctx``, self-attend among queries, MLP."""
    h = _ln(q, params, prefix + "ln_q")
    c = _ln(ctx, params, prefix + "ln_ctx")
    q = ad.add(q, multi_head_attention(h, c, c, heads, params, prefix + "xattn."))
    h = _ln(q, params, prefix + "ln1")
    q = ad.add(q, multi_head_attention(h, h, h, heads, params, prefix + "attn."))
    h = _ln(q, params, prefix + "ln2")
    return ad.add(q, mlp(h, params, prefix + "mlp."))


def sincos_embedding(pos, dim, base=10000.0):
    """Rows ``[sin(p w0), cos(p w0), sin(p w1), cos(p w1), ...]``, ``w_k = base**(-2k/dim)``."""
    if dim % 2:
        raise ConfigError(f"sincos embedding needs an even dim, got {dim}")
    pos = np.asarray(pos, dtype=np.float64).reshape(-1)
    freqs = base ** (-np.arange(0, dim, 2, dtype=np.float64) / dim)
    ang = pos[:, None] * freqs[None, :]
    out = np.empty((pos.size, dim))
    out[:, 0::2] = np.sin(ang)
    out[:, 1::2] = np.cos(ang)
    return out


# ---------------------------------------------------------------- initialisers

def _xavier(rng, d_in, d_out, dtype):
    limit = np.sqrt(6.0 / (d_in + d_out))
    return rng.uniform(-limit, limit, size=(d_in, d_out)).astype(dtype)


def init_ln(params, name, d, dtype):
    params[name + ".g"] = np.ones(d, dtype=dtype)
    params[name + ".b"] = np.zeros(d, dtype=dtype)


def init_attention(params, rng, prefix, d, dtype):
    for n in ("q", "k", "v", "o"):
        params[f"{prefix}w{n}"] = _xavier(rng, d, d, dtype)
        params[f"{prefix}b{n}"] = np.zeros(d, dtype=dtype)


def init_mlp(params, rng, prefix, d, dtype, ratio=4):
    params[prefix + "w1"] = _xavier(rng, d, ratio * d, dtype)
    params[prefix + "b1"] = np.zeros(ratio * d, dtype=dtype)
    params[prefix + "w2"] = _xavier(rng, ratio * d, d, dtype)
    params[prefix + "b2"] = np.zeros(d, dtype=dtype)


def init_transformer_block(params, rng, prefix, d, dtype):
    init_ln(params, prefix + "ln1", d, dtype)
    init_attention(params, rng, prefix + "attn.", d, dtype)
    init_ln(params, prefix + "ln2", d, dtype)
    init_mlp(params, rng, prefix + "mlp.", d, dtype)


def init_cross_block(params, rng, prefix, d, dtype):
    init_ln(params, prefix + "ln_q", d, dtype)
    init_ln(params, prefix + "ln_ctx", d, dtype)
    init_attention(params, rng, prefix + "xattn.", d, dtype)
    init_transformer_block(params, rng, prefix, d, dtype)
