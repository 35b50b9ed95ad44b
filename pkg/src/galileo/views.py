"""Online/target view construction for the global and local objectives."""

import itertools
import math
from dataclasses import dataclass

import numpy as np

from galileo.errors import ConfigError, ContractError

STRATEGIES = ("space", "time", "random")
TARGET_CONTEXTS = ("all", "disjoint-groups", "decoder+encoder")


@dataclass
class ViewPair:
    """Index sets into one TokenSet.

    ``target_tokens`` is what the target encoder attends over;
    ``predicted_tokens`` (a subset of it) are the tokens the predictor is
    scored on. ``fallback`` is set when the requested mask could not be
    realised on the grid and another strategy was used.
    """

    online_tokens: np.ndarray
    target_tokens: np.ndarray
    predicted_tokens: np.ndarray
    online_groups: tuple
    target_groups: tuple
    strategy: str
    fallback: bool = False


def _ceil(x):
    # guards against 0.05 * 100 landing a hair above 5
    return math.ceil(round(x, 9))


def _check_ratio(ratio):
    if not 0 < ratio < 1:
        raise ContractError(f"mask ratio must lie in (0, 1), got {ratio}")


def space_mask(grid, ratio, seed):
    """One contiguous rectangle of cells.

    Returns ``(visible_cells, masked_cells, fallback)`` with cells as flat
    indices ``row * Cc + col``. The rectangle area is the realisable one
    closest to ``ceil(ratio * R * Cc)``, kept below the full grid. On a
    single-cell grid that one cell is masked and ``fallback`` is True.
    """
    _check_ratio(ratio)
    R, Cc = int(grid[0]), int(grid[1])
    n = R * Cc
    rng = np.random.default_rng(seed)
    if n < 2:
        return np.zeros(0, dtype=np.int64), np.arange(n, dtype=np.int64), True
    want = min(max(_ceil(ratio * n), 1), n - 1)
    shapes = [(h, w) for h in range(1, R + 1) for w in range(1, Cc + 1) if h * w <= n - 1]
    best = min(abs(h * w - want) for h, w in shapes)
    shapes = [s for s in shapes if abs(s[0] * s[1] - want) == best]
    h, w = shapes[int(rng.integers(len(shapes)))]
    r0 = int(rng.integers(0, R - h + 1))
    c0 = int(rng.integers(0, Cc - w + 1))
    mask = np.zeros((R, Cc), dtype=bool)
    mask[r0:r0 + h, c0:c0 + w] = True
    flat = mask.reshape(-1)
    return np.flatnonzero(~flat), np.flatnonzero(flat), False


def time_mask(grid, ratio, seed):
    """A contiguous run of ``ceil(ratio * T)`` timesteps (at most T - 1)."""
    _check_ratio(ratio)
    T = int(grid[2])
    if T < 2:
        raise ContractError("time masking needs at least 2 timesteps")
    k = min(max(_ceil(ratio * T), 1), T - 1)
    t0 = int(np.random.default_rng(seed).integers(0, T - k + 1))
    masked = np.arange(t0, t0 + k)
    visible = np.setdiff1d(np.arange(T), masked)
    return visible, masked


def random_mask(L, p_online=0.05, p_target=0.50, seed=0):
    """Disjoint uniform draws of ``ceil(p_online L)`` and ``ceil(p_target L)`` indices."""
    if L < 2:
        raise ContractError("random masking needs at least 2 tokens")
    if not (p_online > 0 and p_target > 0 and p_online + p_target <= 1):
        raise ContractError("need p_online, p_target > 0 with p_online + p_target <= 1")
    n_on, n_tg = _ceil(p_online * L), _ceil(p_target * L)
    if n_on + n_tg > L:
        raise ContractError(f"{n_on} online + {n_tg} target tokens exceed L={L}")
    perm = np.random.default_rng(seed).permutation(L)
    return np.sort(perm[:n_on]), np.sort(perm[n_on:n_on + n_tg])


# ---------------------------------------------------------------- token-level masks

def masked_tokens(meta, grid, strategy, ratio, seed):
    """Boolean [L] mask of tokens hidden by a space or time mask, plus a fallback flag.

    Space masking hides every time-varying and space-only token whose cell
    is masked; time masking hides every token carrying a masked timestep.
    Static tokens are never hidden.
    """
    R, Cc, T = grid
    if strategy == "space":
        _, cells, fb = space_mask(grid, ratio, seed)
        has_cell = meta.row >= 0
        flat = np.where(has_cell, meta.row * Cc + meta.col, -1)
        return has_cell & np.isin(flat, cells), fb
    if strategy == "time":
        _, steps = time_mask(grid, ratio, seed)
        has_t = meta.timestep >= 0
        return has_t & np.isin(meta.timestep, steps), False
    raise ConfigError(f"unknown structured strategy {strategy!r}")


def _feasible(strategy, grid):
    R, Cc, T = grid
    return (strategy == "space" and R * Cc >= 2) or (strategy == "time" and T >= 2)


def _sample_disjoint_groups(groups, rng):
    G = len(groups)
    n1 = int(rng.integers(2, G - 1)) if G >= 4 else 1
    rest = G - n1
    n2 = int(rng.integers(2, rest + 1)) if rest >= 2 else 1
    perm = rng.permutation(groups)
    return tuple(sorted(int(g) for g in perm[:n1])), tuple(sorted(int(g) for g in perm[n1:n1 + n2]))


def build_views(ts, strategy, target_context="all", seed=0, ratio=0.5,
                p_online=0.05, p_target=0.50, max_tries=64):
    """Views for any (strategy, target context) combination.

    ``all``: no group exclusion, the target encoder sees every token.
    ``disjoint-groups``: online and target groups drawn without overlap;
    the target encoder sees only the predicted tokens.
    ``decoder+encoder``: disjoint groups, the target encoder sees the
    predicted tokens together with the online tokens.
    """
    if strategy not in STRATEGIES:
        raise ConfigError(f"unknown masking strategy {strategy!r}")
    if target_context not in TARGET_CONTEXTS:
        raise ConfigError(f"unknown target context {target_context!r}")
    meta = ts.meta
    L = len(meta)
    groups = tuple(int(g) for g in ts.groups)
    rng = np.random.default_rng(seed)
    fallback = False
    if strategy != "random" and not _feasible(strategy, ts.grid):
        other = "time" if strategy == "space" else "space"
        strategy = other if _feasible(other, ts.grid) else "random"
        fallback = True

    for _ in range(max_tries):
        if target_context == "all":
            on_groups = tg_groups = groups
        else:
            if len(groups) < 2:
                raise ContractError("disjoint group views need at least 2 groups")
            on_groups, tg_groups = _sample_disjoint_groups(groups, rng)
        in_on = np.isin(meta.group, on_groups)
        in_tg = np.isin(meta.group, tg_groups)
        sub_seed = int(rng.integers(2 ** 63))
        if strategy == "random":
            on_pool, tg_pool = np.flatnonzero(in_on), np.flatnonzero(in_tg)
            if target_context == "all":
                if L < 2:
                    raise ContractError("random masking needs at least 2 tokens")
                online, predicted = random_mask(L, p_online, p_target, sub_seed)
            else:
                if len(on_pool) == 0 or len(tg_pool) == 0:
                    continue
                sub = np.random.default_rng(sub_seed)
                n_on = min(_ceil(p_online * len(on_pool)), len(on_pool))
                n_tg = min(_ceil(p_target * len(tg_pool)), len(tg_pool))
                online = np.sort(sub.choice(on_pool, n_on, replace=False))
                predicted = np.sort(sub.choice(tg_pool, n_tg, replace=False))
        else:
            hidden, fb = masked_tokens(meta, ts.grid, strategy, ratio, sub_seed)
            fallback = fallback or fb
            online = np.flatnonzero(in_on & ~hidden)
            predicted = np.flatnonzero(in_tg & hidden)
        if len(online) and len(predicted):
            break
    else:
        raise ContractError(f"could not build non-empty {strategy} views in {max_tries} tries")

    if target_context == "all":
        target = np.arange(L)
    elif target_context == "disjoint-groups":
        target = predicted
    else:
        target = np.union1d(predicted, online)
    return ViewPair(online.astype(np.int64), target.astype(np.int64),
                    predicted.astype(np.int64), on_groups, tg_groups, strategy, fallback)


_CALLS = itertools.count()


def build_global_views(ts, mode="all-context", seed=0, strategy=None, ratio=0.5):
    """Structured views for the global objective.

    ``mode`` is ``all-context`` or ``disjoint-groups``. Without an explicit
    ``strategy`` successive calls alternate space, time, space, ...
    """
    if len(set(int(g) for g in ts.groups)) < 2:
        raise ContractError("global views need at least 2 channel groups")
    context = {"all-context": "all", "all": "all",
               "disjoint-groups": "disjoint-groups",
               "decoder+encoder": "decoder+encoder"}.get(mode)
    if context is None:
        raise ConfigError(f"unknown global view mode {mode!r}")
    if strategy is None:
        strategy = ("space", "time")[next(_CALLS) % 2]
    return build_views(ts, strategy, context, seed, ratio)


def build_local_views(ts, seed=0, p_online=0.05, p_target=0.50):
    """Unstructured 5% / 50% views of the whole token set."""
    online, target = random_mask(len(ts.meta), p_online, p_target, seed)
    groups = tuple(int(g) for g in ts.groups)
    return ViewPair(online, target, target, groups, groups, "random")


def strategy_cycle(name):
    """Strategy sequence for a config value like ``space+time`` or ``random+space+time``."""
    parts = tuple(name.split("+"))
    if not parts or any(p not in STRATEGIES for p in parts):
        raise ConfigError(f"unknown masking strategy {name!r}")
    return parts
