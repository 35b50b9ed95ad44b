"""Sample -> token sequence.

Tokens are laid out group by group in catalog order. Inside a space-time
group rows run over (cell row, cell col, timestep); space groups over
(cell row, cell col); time groups over timesteps; a static group is one
token. Patch features are ordered (pixel row, pixel col, channel).

The embedding tensor ``e`` splits the width into quarters: spatial row
sinusoid, spatial column sinusoid, timestep sinusoid, and a zero quarter.
Learned month and group tables are added across the full width.
"""

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from galileo.data.catalog import (
    SPACE,
    SPACE_TIME,
    STATIC,
    TIME,
    block_layout,
    canonical_channel_groups,
)
from galileo.errors import ConfigError, ContractError
from galileo.numerics import autodiff as ad
from galileo.numerics.nn import sincos_embedding

CANONICAL_P = 8
GSD_REFERENCE = 96.0  # pixels; spatial positions are cell * (P / H) * GSD_REFERENCE


@dataclass
class TokenMeta:
    """Per-token metadata; -1 marks an absent field.

    ``month`` is [L] for a single sample or [B, L] for a batch; the other
    fields are shared by every item of a batch.
    """

    group: np.ndarray
    row: np.ndarray
    col: np.ndarray
    timestep: np.ndarray
    month: np.ndarray

    def __len__(self):
        return len(self.group)

    def entry(self, i, item=0):
        month = self.month[item, i] if self.month.ndim == 2 else self.month[i]
        cell = None if self.row[i] < 0 else (int(self.row[i]), int(self.col[i]))
        return {
            "group": int(self.group[i]),
            "cell": cell,
            "timestep": None if self.timestep[i] < 0 else int(self.timestep[i]),
            "month": None if month < 0 else int(month),
        }


@dataclass
class TokenSet:
    """Tokens for one sample ([L, D]) or a batch sharing geometry ([B, L, D])."""

    x: ad.Tensor  # proj + e
    e: ad.Tensor
    proj: ad.Tensor
    meta: TokenMeta
    patch_size: int
    grid: tuple  # (H/P, W/P, T)
    groups: tuple  # catalog indices present, in token order

    def __len__(self):
        return len(self.meta)


# ---------------------------------------------------------------- patchify

def patchify(x, P):
    """[H, W, T, C] -> [(H/P)(W/P)T, P*P*C]; a leading batch axis is allowed."""
    batched = x.ndim == 5
    if not batched:
        x = x[None]
    B, H, W, T, C = x.shape
    if P < 1 or H % P or W % P:
        raise ContractError(f"patch size {P} does not divide {H}x{W}")
    R, Cc = H // P, W // P
    y = x.reshape(B, R, P, Cc, P, T, C).transpose(0, 1, 3, 5, 2, 4, 6)
    y = y.reshape(B, R * Cc * T, P * P * C)
    return y if batched else y[0]


def unpatchify(y, P, H, W, T):
    batched = y.ndim == 3
    if not batched:
        y = y[None]
    B, _, F = y.shape
    C = F // (P * P)
    R, Cc = H // P, W // P
    x = y.reshape(B, R, Cc, T, P, P, C).transpose(0, 1, 4, 2, 5, 3, 6)
    x = x.reshape(B, H, W, T, C)
    return x if batched else x[0]


# ---------------------------------------------------------------- flexible patch weights

def _area_matrix(n_in, n_out):
    """1D box resampling: output pixel i averages the input span it covers."""
    A = np.zeros((n_out, n_in))
    step = n_in / n_out
    for i in range(n_out):
        lo, hi = i * step, (i + 1) * step
        for j in range(int(np.floor(lo)), min(int(np.ceil(hi)), n_in)):
            overlap = min(hi, j + 1) - max(lo, j)
            if overlap > 0:
                A[i, j] = overlap / step
    return A


@lru_cache(maxsize=None)
def resize_matrix(P0, P1):
    """[P1*P1, P0*P0] map taking flattened P0 kernels to P1 kernels.

    With ``B`` the 2D area resampler from P0 to P1 pixels, the resized
    kernel solves ``B.T @ w1 = w0`` in the least-squares sense, so
    ``<B x, w1> == <x, w0>`` whenever that system is consistent.
    """
    A = _area_matrix(P0, P1)
    B = np.kron(A, A)
    M = np.linalg.pinv(B.T)
    M.setflags(write=False)
    return M


def resize_patch_weights(W, P0, P1):
    """Resize a [(P0*P0*C), D] patch projection to [(P1*P1*C), D]."""
    if not (1 <= P0 <= 8 and 1 <= P1 <= 8):
        raise ContractError("patch sizes must lie in 1..8")
    if P0 == P1:
        return W
    rows, D = W.shape
    C = rows // (P0 * P0)
    M = resize_matrix(P0, P1).astype(W.dtype)
    Wr = W.reshape(P0 * P0, C * D)
    return (M @ Wr).reshape(P1 * P1 * C, D)


def _resized_weight(W, P):
    """Differentiable counterpart of ``resize_patch_weights`` from the canonical size."""
    if P == CANONICAL_P:
        return W
    rows, D = W.shape
    C = rows // (CANONICAL_P * CANONICAL_P)
    M = resize_matrix(CANONICAL_P, P).astype(W.dtype)
    Wr = ad.reshape(W, (CANONICAL_P * CANONICAL_P, C * D))
    return ad.reshape(ad.matmul(M, Wr), (P * P * C, D))


# ---------------------------------------------------------------- layout / counts

def token_count(H, W, T, P, groups):
    specs = canonical_channel_groups()
    cells = (H // P) * (W // P)
    per_kind = {SPACE_TIME: cells * T, SPACE: cells, TIME: T, STATIC: 1}
    return sum(per_kind[specs[g].kind] for g in groups)


def token_meta(H, W, T, P, groups, months):
    """Metadata for the token layout; ``months`` is [T] or [B, T]."""
    specs = canonical_channel_groups()
    R, Cc = H // P, W // P
    rr, cc, tt = np.meshgrid(np.arange(R), np.arange(Cc), np.arange(T), indexing="ij")
    st = (rr.reshape(-1), cc.reshape(-1), tt.reshape(-1))
    rs, cs = np.meshgrid(np.arange(R), np.arange(Cc), indexing="ij")
    sp = (rs.reshape(-1), cs.reshape(-1), np.full(R * Cc, -1))
    tm = (np.full(T, -1), np.full(T, -1), np.arange(T))
    sc = (np.array([-1]), np.array([-1]), np.array([-1]))
    parts = {SPACE_TIME: st, SPACE: sp, TIME: tm, STATIC: sc}
    g_all, r_all, c_all, t_all = [], [], [], []
    for g in groups:
        r, c, t = parts[specs[g].kind]
        g_all.append(np.full(len(r), g))
        r_all.append(r)
        c_all.append(c)
        t_all.append(t)
    if not groups:
        empty = np.zeros(0, dtype=np.int64)
        months = np.asarray(months)
        m = np.zeros(months.shape[:-1] + (0,), dtype=np.int64)
        return TokenMeta(empty, empty, empty, empty, m)
    t_cat = np.concatenate(t_all)
    months = np.asarray(months)
    month = np.where(t_cat >= 0, months[..., np.maximum(t_cat, 0)], -1)
    return TokenMeta(np.concatenate(g_all).astype(np.int64),
                     np.concatenate(r_all).astype(np.int64),
                     np.concatenate(c_all).astype(np.int64),
                     t_cat.astype(np.int64), month.astype(np.int64))


# ---------------------------------------------------------------- embeddings

def sinusoid_part(meta, P, H, D, dtype=np.float64):
    """The parameter-free part of ``e``: [L, D]."""
    if D % 4:
        raise ConfigError(f"embedding width {D} must be divisible by 4")
    q = D // 4
    L = len(meta)
    out = np.zeros((L, D))
    spatial = meta.row >= 0
    if spatial.any():
        scale = P / H * GSD_REFERENCE
        out[spatial, :q] = sincos_embedding(meta.row[spatial] * scale, q)
        out[spatial, q:2 * q] = sincos_embedding(meta.col[spatial] * scale, q)
    temporal = meta.timestep >= 0
    if temporal.any():
        out[temporal, 2 * q:3 * q] = sincos_embedding(meta.timestep[temporal], q)
    return out.astype(dtype)


def build_embeddings(meta, P, H, D, params):
    """``e`` for the tokens in ``meta``: [L, D], or [B, L, D] for batched months."""
    month_table = params["embed.month"]
    group_table = params["embed.group"]
    dtype = group_table.dtype
    e = ad.add(sinusoid_part(meta, P, H, D, dtype), ad.take(group_table, meta.group))
    has_month = (meta.month >= 0).astype(dtype)[..., None]
    month_rows = ad.take(month_table, np.maximum(meta.month, 0))
    return ad.add(e, ad.mul(month_rows, has_month))


# ---------------------------------------------------------------- tokenize

def _stack(samples, attr):
    return np.stack([getattr(s, attr) for s in samples])


def tokenize_batch(samples, P, groups, params):
    """Tokenize samples that share (H, W, T) into a [B, L, D] TokenSet."""
    if not samples:
        raise ContractError("tokenize_batch needs at least one sample")
    H, W, T = samples[0].dims
    if any(s.dims != (H, W, T) for s in samples):
        raise ContractError("tokenize_batch needs samples of identical dims")
    if H % P or W % P:
        raise ContractError(f"patch size {P} does not divide {H}x{W}")
    specs = canonical_channel_groups()
    layout = block_layout()
    groups = tuple(groups)
    for g in groups:
        if not 0 <= g < len(specs):
            raise ConfigError(f"unknown channel group index {g}")
    B = len(samples)
    D = params["embed.group"].shape[1]
    dtype = params["embed.group"].dtype
    st = _stack(samples, "spacetime").astype(dtype, copy=False)
    sp = _stack(samples, "space").astype(dtype, copy=False)
    tm = _stack(samples, "time").astype(dtype, copy=False)
    sc = _stack(samples, "static").astype(dtype, copy=False)
    months = np.stack([np.asarray(s.months) for s in samples])

    pieces = []
    st_patches = sp_patches = None
    for g in groups:
        spec = specs[g]
        kind, off, n = layout[spec.name]
        w = params[f"proj.{spec.name}.w"]
        b = params[f"proj.{spec.name}.b"]
        if kind == SPACE_TIME:
            if st_patches is None:
                st_patches = patchify(st, P).reshape(B, -1, P * P, st.shape[-1])
            feats = st_patches[..., off:off + n].reshape(B, -1, P * P * n)
            w = _resized_weight(w, P)
        elif kind == SPACE:
            if sp_patches is None:
                sp_patches = patchify(sp[:, :, :, None, :], P).reshape(B, -1, P * P, sp.shape[-1])
            feats = sp_patches[..., off:off + n].reshape(B, -1, P * P * n)
            w = _resized_weight(w, P)
        elif kind == TIME:
            feats = tm[..., off:off + n]
        else:
            feats = sc[:, None, off:off + n]
        pieces.append(ad.add(ad.matmul(np.ascontiguousarray(feats), w), b))

    meta = token_meta(H, W, T, P, groups, months)
    if pieces:
        proj = ad.concat(pieces, axis=1) if len(pieces) > 1 else pieces[0]
        e = build_embeddings(meta, P, H, D, params)
    else:
        proj = ad.Tensor(np.zeros((B, 0, D), dtype=dtype))
        e = ad.Tensor(np.zeros((B, 0, D), dtype=dtype))
    x = ad.add(proj, e)
    return TokenSet(x, e, proj, meta, P, (H // P, W // P, T), groups)


def tokenize(s, P, groups, params):
    """Tokenize a single sample into an [L, D] TokenSet."""
    ts = tokenize_batch([s], P, groups, params)
    L, D = ts.x.shape[1:]
    sq = lambda t: ad.reshape(t, (L, D))  # noqa: E731
    meta = TokenMeta(ts.meta.group, ts.meta.row, ts.meta.col, ts.meta.timestep,
                     ts.meta.month[0])
    return TokenSet(sq(ts.x), sq(ts.e), sq(ts.proj), meta, P, ts.grid, ts.groups)


def init_tokenizer_params(params, rng, D, dtype):
    for spec in canonical_channel_groups():
        C = len(spec.channels)
        fan_in = CANONICAL_P * CANONICAL_P * C if spec.kind in (SPACE_TIME, SPACE) else C
        params[f"proj.{spec.name}.w"] = (rng.normal(0.0, 1.0, size=(fan_in, D))
                                         / np.sqrt(fan_in)).astype(dtype)
        params[f"proj.{spec.name}.b"] = np.zeros(D, dtype=dtype)
    params["embed.month"] = rng.normal(0.0, 0.02, size=(12, D)).astype(dtype)
    params["embed.group"] = rng.normal(0.0, 0.02, size=(len(canonical_channel_groups()), D)).astype(dtype)
