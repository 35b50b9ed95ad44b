"""Patch/batch discrimination losses and MSE.

Inputs are either a [B, L, D] tensor or a list of [L_i, D] tensors
(ragged samples). ``sim`` is the dot product of l2-normalised rows.
"""

import numpy as np

from galileo.errors import ConfigError, ContractError
from galileo.numerics import autodiff as ad


def _as_list(x):
    if isinstance(x, (list, tuple)):
        return list(x)
    if x.ndim == 2:
        return [x]
    return None


def _check(p, t, tau):
    if tau <= 0:
        raise ContractError(f"temperature must be > 0, got {tau}")
    ps, ts = _as_list(p), _as_list(t)
    if (ps is None) != (ts is None):
        raise ContractError("predictions and targets must both be batched or both ragged")
    if ps is None:
        if p.shape != t.shape:
            raise ContractError(f"prediction {p.shape} and target {t.shape} differ")
        return None, None
    if len(ps) != len(ts) or any(a.shape != b.shape for a, b in zip(ps, ts)):
        raise ContractError("ragged predictions and targets differ in shape")
    if not ps:
        raise ContractError("empty batch")
    return ps, ts


def _info_nce_rows(u, v, tau):
    """Per-row -log softmax of the positive (the diagonal), [..., L]."""
    logits = ad.mul(ad.matmul(u, ad.swap_last(v)), 1.0 / tau)
    return ad.sub(ad.logsumexp(logits), ad.diagonal(logits))


def patch_disc_loss(p, t, tau=0.1):
    """Negatives are the other tokens of the same sample; mean over tokens, then samples."""
    ps, ts = _check(p, t, tau)
    if ps is None:
        rows = _info_nce_rows(ad.l2_normalize(p), ad.l2_normalize(t), tau)
        return ad.mul(ad.mean(rows), tau)
    per = [ad.mean(_info_nce_rows(ad.l2_normalize(a), ad.l2_normalize(b), tau))
           for a, b in zip(ps, ts)]
    total = per[0]
    for x in per[1:]:
        total = ad.add(total, x)
    return ad.mul(total, tau / len(per))


def all_disc_loss(p, t, tau=0.1):
    """Negatives span every token of every sample in the batch.

    ``-tau/B sum_i 1/L_i sum_j log(exp(s_ij,ij / tau) / sum_i' sum_j' exp(s_ij,i'j' / tau))``
    """
    ps, ts = _check(p, t, tau)
    if ps is None:
        B, L, D = p.shape
        u = ad.reshape(p, (B * L, D))
        v = ad.reshape(t, (B * L, D))
        weights = np.full(B * L, 1.0 / (B * L))
    else:
        B = len(ps)
        u = ad.concat(ps, axis=0) if B > 1 else ps[0]
        v = ad.concat(ts, axis=0) if B > 1 else ts[0]
        weights = np.concatenate([np.full(a.shape[0], 1.0 / (B * a.shape[0])) for a in ps])
    rows = _info_nce_rows(ad.l2_normalize(u), ad.l2_normalize(v), tau)
    return ad.mul(ad.tsum(ad.mul(rows, weights.astype(rows.dtype))), tau)


def mse_loss(p, t, tau=None):
    """Mean squared error over all elements (``tau`` is accepted and ignored)."""
    ps, ts = _as_list(p), _as_list(t)
    if ps is not None:
        if len(ps) != len(ts) or any(a.shape != b.shape for a, b in zip(ps, ts)):
            raise ContractError("ragged predictions and targets differ in shape")
        p = ad.concat(ps, axis=0) if len(ps) > 1 else ps[0]
        t = ad.concat(ts, axis=0) if len(ts) > 1 else ts[0]
    elif p.shape != t.shape:
        raise ContractError(f"prediction {p.shape} and target {t.shape} differ")
    d = ad.sub(p, t)
    return ad.mean(ad.mul(d, d))


LOSSES = {"PatchDisc": patch_disc_loss, "AllDisc": all_disc_loss, "MSE": mse_loss}


def get_loss(name):
    try:
        return LOSSES[name]
    except KeyError:
        raise ConfigError(f"unknown loss {name!r}; choose from {sorted(LOSSES)}") from None
