"""Repeated-augmentation batches with a random shape per repeat slot."""

from dataclasses import dataclass

import numpy as np

from galileo.data.sample import augment, subsample_shape
from galileo.errors import ContractError
from galileo.training.config import FULL_SHAPE_MENU

MAX_REDRAWS = 16


@dataclass
class BatchSlot:
    """One repeat of the minibatch; every item shares (P, S, T')."""

    samples: list
    codes: list
    P: int
    S: int
    T: int


def draw_shape(rng, H, W, T, patch_sizes, menu):
    """Draw (P, S, T'); redraw when the window does not fit, then clamp."""
    for _ in range(MAX_REDRAWS):
        P = int(patch_sizes[rng.integers(len(patch_sizes))])
        S, Ts = menu[rng.integers(len(menu))]
        if P * S <= min(H, W) and Ts <= T:
            return P, int(S), int(Ts)
    P = min(P, H, W)
    return P, max(1, min(int(S), min(H, W) // P)), min(int(Ts), T)


def make_batch(samples, repeats=4, seed=0, patch_sizes=range(1, 9), menu=FULL_SHAPE_MENU,
               workers=1):
    """``repeats`` slots, each holding every sample once, cropped and augmented independently."""
    if repeats < 1:
        raise ContractError("repeats must be >= 1")
    if not samples:
        raise ContractError("make_batch needs at least one sample")
    patch_sizes = tuple(patch_sizes)
    H = min(s.dims[0] for s in samples)
    W = min(s.dims[1] for s in samples)
    T = min(s.dims[2] for s in samples)
    rng = np.random.default_rng(seed)
    plans = []
    for _ in range(repeats):
        P, S, Ts = draw_shape(rng, H, W, T, patch_sizes, menu)
        codes = rng.integers(0, 8, size=len(samples))
        crop_seeds = rng.integers(0, 2 ** 63, size=len(samples))
        plans.append((P, S, Ts, codes, crop_seeds))

    def build(args):
        s, P, S, Ts, code, cs = args
        return augment(subsample_shape(s, P, S, Ts, int(cs)), int(code))

    slots = []
    for P, S, Ts, codes, crop_seeds in plans:
        jobs = [(s, P, S, Ts, codes[i], crop_seeds[i]) for i, s in enumerate(samples)]
        if workers > 1:
            from concurrent.futures import ThreadPoolExecutor
            with ThreadPoolExecutor(workers) as pool:
                items = list(pool.map(build, jobs))
        else:
            items = [build(j) for j in jobs]
        slots.append(BatchSlot(items, [int(c) for c in codes], P, S, Ts))
    return slots
