import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from galileo.errors import ContractError
from galileo.tokenizer import TokenSet, token_meta
from galileo.views import (
    build_global_views,
    build_local_views,
    build_views,
    masked_tokens,
    random_mask,
    space_mask,
    strategy_cycle,
    time_mask,
)

ALL = tuple(range(17))


def meta_set(R, Cc, T, groups=ALL, P=1):
    """A TokenSet carrying metadata only; views never look at token values."""
    meta = token_meta(R * P, Cc * P, T, P, groups, np.arange(T) % 12)
    return TokenSet(None, None, None, meta, P, (R, Cc, T), tuple(groups))


def rectangles(R, Cc, area):
    out = set()
    for h in range(1, R + 1):
        for w in range(1, Cc + 1):
            if h * w != area:
                continue
            for r0, c0 in itertools.product(range(R - h + 1), range(Cc - w + 1)):
                out.add(frozenset(r * Cc + c for r in range(r0, r0 + h) for c in range(c0, c0 + w)))
    return out


# ---------------------------------------------------------------- space / time

def test_space_mask_rectangle_enumeration():
    legal = rectangles(4, 4, 8)
    seen = set()
    for seed in range(300):
        vis, masked, fb = space_mask((4, 4, 3), 0.5, seed)
        assert not fb and len(masked) == 8
        assert frozenset(masked.tolist()) in legal
        assert sorted(np.concatenate([vis, masked]).tolist()) == list(range(16))
        seen.add(frozenset(masked.tolist()))
    assert len(seen) > 5


def test_space_mask_extreme_and_fallback():
    vis, masked, _ = space_mask((1, 5, 2), 0.99, 1)
    assert len(vis) == 1 and len(masked) == 4
    # 8 of 9 is not a rectangle on 3x3; the closest realisable area is 6
    assert len(space_mask((3, 3, 2), 0.99, 1)[1]) == 6
    vis, masked, fb = space_mask((1, 1, 4), 0.5, 0)
    assert fb and len(masked) == 1
    a, b = space_mask((5, 3, 1), 0.4, 9), space_mask((5, 3, 1), 0.4, 9)
    assert all(np.array_equal(x, y) for x, y in zip(a[:2], b[:2]))


def test_time_mask_examples():
    vis, masked = time_mask((2, 2, 12), 0.5, 0)
    assert len(masked) == 6 and np.all(np.diff(masked) == 1)
    for seed in range(50):
        vis, masked = time_mask((1, 1, 8), 0.5, seed)
        if masked[0] == 0:
            assert np.array_equal(vis, np.arange(len(masked), 8))
            break
    else:
        pytest.fail("no draw masked the first timestep")
    with pytest.raises(ContractError):
        time_mask((2, 2, 1), 0.5, 0)


def test_time_mask_never_hides_static_or_space():
    ts = meta_set(2, 2, 6)
    hidden, _ = masked_tokens(ts.meta, ts.grid, "time", 0.5, 3)
    assert not np.any(hidden & (ts.meta.timestep < 0))


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 5), st.integers(1, 5), st.integers(2, 6), st.floats(0.05, 0.95),
       st.integers(0, 10 ** 6), st.sampled_from(["space", "time"]))
def test_consistency_rule(R, Cc, T, ratio, seed, strategy):
    ts = meta_set(R, Cc, T, groups=(0, 3, 7, 10, 13))
    hidden, _ = masked_tokens(ts.meta, ts.grid, strategy, ratio, seed)
    m = ts.meta
    if strategy == "space":
        _, cells, _ = space_mask(ts.grid, ratio, seed)
        flat = m.row * Cc + m.col
        expect = (m.row >= 0) & np.isin(flat, cells)
    else:
        _, steps = time_mask(ts.grid, ratio, seed)
        expect = (m.timestep >= 0) & np.isin(m.timestep, steps)
    assert np.array_equal(hidden, expect)


# ---------------------------------------------------------------- random

def test_random_mask_examples():
    on, tg = random_mask(100, seed=0)
    assert len(on) == 5 and len(tg) == 50 and not set(on) & set(tg)
    on, tg = random_mask(2, seed=0)
    assert len(on) == 1 and len(tg) == 1
    with pytest.raises(ContractError):
        random_mask(1)
    with pytest.raises(ContractError):
        random_mask(10, 0.6, 0.6)


def test_random_mask_frequency():
    counts = np.zeros(40)
    for seed in range(10_000):
        on, _ = random_mask(40, seed=seed)
        counts[on] += 1
    freq = counts / 10_000
    assert np.all(np.abs(freq - 2 / 40) <= 0.01)


@settings(max_examples=60, deadline=None)
@given(st.integers(2, 3000), st.integers(0, 10 ** 9))
def test_random_mask_sizes(L, seed):
    on, tg = random_mask(L, seed=seed)
    assert len(on) == int(np.ceil(round(0.05 * L, 9)))
    assert len(tg) == int(np.ceil(round(0.5 * L, 9)))
    assert len(np.intersect1d(on, tg)) == 0


# ---------------------------------------------------------------- global / local

def test_global_disjoint_groups():
    ts = meta_set(3, 3, 4)
    for seed in range(200):
        v = build_global_views(ts, "disjoint-groups", seed)
        assert not set(v.online_groups) & set(v.target_groups)
        assert len(v.online_tokens) and len(v.target_tokens)
        assert set(ts.meta.group[v.online_tokens]) <= set(v.online_groups)
        assert set(ts.meta.group[v.predicted_tokens]) <= set(v.target_groups)


def test_global_all_context_covers_everything():
    ts = meta_set(3, 3, 4)
    v = build_global_views(ts, "all-context", 0)
    assert np.array_equal(v.target_tokens, np.arange(len(ts)))
    assert not set(v.online_tokens) & set(v.predicted_tokens)


def test_global_alternates():
    ts = meta_set(3, 3, 4)
    seq = [build_global_views(ts, "all-context", s).strategy for s in range(6)]
    assert all(a != b for a, b in zip(seq, seq[1:]))
    assert set(seq) == {"space", "time"}


def test_global_needs_two_groups():
    with pytest.raises(ContractError):
        build_global_views(meta_set(2, 2, 2, groups=(0,)), "all-context", 0)


def test_group_count_distribution():
    ts = meta_set(2, 2, 2)
    n1 = [len(build_views(ts, "space", "disjoint-groups", s).online_groups) for s in range(3000)]
    counts = np.bincount(n1, minlength=16)[2:16]
    assert np.all(counts > 0)
    assert counts.max() / counts.min() < 1.6


def test_target_context_modes():
    ts = meta_set(3, 3, 4)
    d = build_views(ts, "time", "disjoint-groups", 4)
    assert np.array_equal(d.target_tokens, d.predicted_tokens)
    de = build_views(ts, "time", "decoder+encoder", 4)
    assert np.array_equal(de.target_tokens, np.union1d(de.predicted_tokens, de.online_tokens))


def test_local_views():
    ts = meta_set(4, 4, 12, P=8)
    assert len(ts) == 1432
    v = build_local_views(ts, seed=5)
    assert len(v.online_tokens) == 72 and len(v.target_tokens) == 716
    assert not set(v.online_tokens) & set(v.target_tokens)
    w = build_local_views(ts, seed=5)
    assert np.array_equal(v.online_tokens, w.online_tokens)


def test_strategy_fallback_on_tiny_grid():
    ts = meta_set(1, 1, 3)
    v = build_views(ts, "space", "all", 0)
    assert v.fallback and v.strategy == "time"


def test_strategy_cycle():
    assert strategy_cycle("random+space+time") == ("random", "space", "time")
    with pytest.raises(Exception):
        strategy_cycle("space+diagonal")
