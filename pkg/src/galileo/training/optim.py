"""AdamW with decoupled weight decay, gradient clipping, schedules and EMA."""

import math

import numpy as np

from galileo.errors import ContractError


def schedules(step, total_steps, warmup_steps, peak_lr, m0):
    """(lr, m): linear warmup then cosine decay to 0; momentum linear from m0 to 1."""
    if total_steps <= 0:
        return 0.0, 1.0
    if warmup_steps >= total_steps:
        raise ContractError("warmup must be shorter than the run")
    step = min(max(step, 0), total_steps)
    if step < warmup_steps:
        lr = peak_lr * step / warmup_steps
    else:
        frac = (step - warmup_steps) / (total_steps - warmup_steps)
        lr = peak_lr * 0.5 * (1.0 + math.cos(math.pi * frac))
    m = m0 + (1.0 - m0) * step / total_steps
    return lr, m


def ema_update(target, online, m):
    """In place ``target = m * target + (1 - m) * online``; returns ``target``."""
    if not 0.0 <= m <= 1.0:
        raise ContractError(f"EMA momentum must lie in [0, 1], got {m}")
    if set(target) != set(online):
        raise ContractError("EMA target and online parameters have different names")
    for name, t in target.items():
        o = online[name]
        if t.shape != o.shape:
            raise ContractError(f"EMA shape mismatch for {name}: {t.shape} vs {o.shape}")
        if m == 1.0:
            continue
        mixed = m * t.data.astype(np.float64) + (1.0 - m) * o.data.astype(np.float64)
        t.data = mixed.astype(t.data.dtype)
    return target


def global_norm(grads):
    return math.sqrt(sum(float(np.sum(np.square(g, dtype=np.float64))) for g in grads))


def decays(value):
    """Weight decay applies to matrices only; norms and biases are exempt."""
    return value.ndim >= 2


class AdamW:
    def __init__(self, params, beta1=0.9, beta2=0.999, eps=1e-8, weight_decay=0.0):
        self.params = params  # name -> Tensor
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.weight_decay = weight_decay
        self.m = {k: np.zeros(v.shape) for k, v in params.items()}
        self.v = {k: np.zeros(v.shape) for k, v in params.items()}
        self.t = 0

    def step(self, grads, lr):
        """``grads`` maps names to arrays; missing names get no gradient update."""
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        for name, p in self.params.items():
            g = grads.get(name)
            w = p.data.astype(np.float64)
            if g is not None:
                g = g.astype(np.float64)
                m, v = self.m[name], self.v[name]
                m *= b1
                m += (1.0 - b1) * g
                v *= b2
                v += (1.0 - b2) * g * g
                upd = (m / c1) / (np.sqrt(v / c2) + self.eps)
            else:
                upd = 0.0
            if self.weight_decay and decays(p.data):
                upd = upd + self.weight_decay * w
            if lr and (g is not None or self.weight_decay):
                p.data = (w - lr * upd).astype(p.data.dtype)
