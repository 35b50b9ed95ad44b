import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from galileo.data import generate_corpus, generate_synthetic_sample
from galileo.errors import ConfigError, ContractError
from galileo.model import encode, init_encoder, init_predictor, load_checkpoint, model_config, predict
from galileo.numerics import autodiff as ad
from galileo.tokenizer import tokenize
from galileo.training import (
    AdamW,
    all_disc_loss,
    ema_update,
    make_batch,
    mse_loss,
    patch_disc_loss,
    schedules,
)
from galileo.training.config import Config, load_config, parse_config_text
from galileo.training.loop import (
    Run,
    init_state,
    minibatch_indices,
    objective_for_step,
    pretrain,
    train_step,
)
from conftest import fd_check


def T(x, grad=False):
    return ad.Tensor(np.asarray(x, dtype=np.float64), requires_grad=grad)


def ragged(rng, sizes, D=4):
    return [rng.normal(size=(n, D)) for n in sizes]


def brute_terms(ps, ts, tau):
    """Per-sample terms -tau/L_i sum_j log(...) of the literal double sum."""
    unit = lambda x: x / np.linalg.norm(x)  # noqa: E731
    B = len(ps)
    terms = []
    for i in range(B):
        acc = 0.0
        for j in range(len(ps[i])):
            u = unit(ps[i][j])
            pos = np.exp(u @ unit(ts[i][j]) / tau)
            den = sum(np.exp(u @ unit(ts[k][m]) / tau) for k in range(B) for m in range(len(ts[k])))
            acc += np.log(pos / den)
        terms.append(-tau * acc / len(ps[i]))
    return terms


def brute_all_disc(ps, ts, tau):
    return float(np.mean(brute_terms(ps, ts, tau)))


def brute_patch_disc(ps, ts, tau):
    return float(np.mean([brute_all_disc([p], [t], tau) for p, t in zip(ps, ts)]))


# ---------------------------------------------------------------- losses

def test_patch_disc_examples():
    x = T(np.array([[1.0, 2.0, 3.0]]))
    assert abs(float(patch_disc_loss(x, x).data)) < 1e-12
    e = T(np.eye(2))
    assert abs(float(patch_disc_loss(e, e, tau=1.0).data) - math.log(1 + math.exp(-1))) < 1e-12
    assert abs(math.log(1 + math.exp(-1)) - 0.3133) < 1e-4
    rng = np.random.default_rng(0)
    p, t = T(rng.normal(size=(5, 4))), T(rng.normal(size=(5, 4)))
    a = float(patch_disc_loss(p, t).data)
    assert abs(float(patch_disc_loss(p * 3.0, t * 3.0).data) - a) < 1e-12


def test_patch_disc_zero_row():
    with pytest.raises(ContractError):
        patch_disc_loss(T(np.zeros((2, 3))), T(np.ones((2, 3))))


def test_disc_losses_match_oracles():
    rng = np.random.default_rng(1)
    for tau in (0.1, 0.5, 1.0):
        ps, ts = ragged(rng, [3, 5, 2]), ragged(rng, [3, 5, 2])
        got = float(all_disc_loss([T(a) for a in ps], [T(b) for b in ts], tau).data)
        assert abs(got - brute_all_disc(ps, ts, tau)) < 1e-12
        got = float(patch_disc_loss([T(a) for a in ps], [T(b) for b in ts], tau).data)
        assert abs(got - brute_patch_disc(ps, ts, tau)) < 1e-12


def test_all_disc_batch_negatives_raise_loss():
    rng = np.random.default_rng(2)
    p1 = rng.normal(size=(3, 4))
    t1 = p1 + 0.1 * rng.normal(size=(3, 4))
    alone = float(all_disc_loss([T(p1)], [T(t1)]).data)
    p2 = rng.normal(size=(3, 4))
    t2 = t1 + 0.05 * rng.normal(size=(3, 4))  # near sample-1 positives
    sample1_term = brute_terms([p1, p2], [t1, t2], 0.1)[0]
    assert sample1_term > alone
    got = float(all_disc_loss([T(p1), T(p2)], [T(t1), T(t2)]).data)
    assert abs(got - brute_all_disc([p1, p2], [t1, t2], 0.1)) < 1e-12


@settings(max_examples=40, deadline=None)
@given(st.lists(st.integers(1, 6), min_size=1, max_size=4), st.integers(0, 10 ** 6),
       st.floats(0.05, 2.0))
def test_disc_loss_properties(sizes, seed, tau):
    rng = np.random.default_rng(seed)
    ps, ts = ragged(rng, sizes), ragged(rng, sizes)
    P, Tt = [T(a) for a in ps], [T(b) for b in ts]
    for fn in (patch_disc_loss, all_disc_loss):
        v = float(fn(P, Tt, tau).data)
        assert v >= -1e-12
        perm = rng.permutation(len(sizes))
        w = float(fn([P[i] for i in perm], [Tt[i] for i in perm], tau).data)
        assert abs(v - w) < 1e-10
        scales = rng.uniform(0.1, 10, size=len(sizes))
        s = float(fn([T(a * c) for a, c in zip(ps, scales)], Tt, tau).data)
        assert abs(v - s) < 1e-10
    one = float(all_disc_loss(P[:1], Tt[:1], tau).data)
    assert abs(one - float(patch_disc_loss(P[:1], Tt[:1], tau).data)) <= 1e-10


def test_mse_examples():
    rng = np.random.default_rng(3)
    t = rng.normal(size=(3, 4))
    assert float(mse_loss(T(t), T(t)).data) == 0
    assert abs(float(mse_loss(T(t + 1), T(t)).data) - 1) < 1e-12
    p = rng.normal(size=(3, 4))
    ref = sum((p[i, j] - t[i, j]) ** 2 for i in range(3) for j in range(4)) / 12
    assert abs(float(mse_loss(T(p), T(t)).data) - ref) < 1e-14


@pytest.mark.parametrize("fn", [patch_disc_loss, all_disc_loss, mse_loss])
def test_loss_gradients_fd(fn):
    rng = np.random.default_rng(4)
    worst = 0.0
    for _ in range(100):
        sizes = rng.integers(1, 5, size=rng.integers(1, 4))
        arrays = {f"p{i}": rng.normal(size=(n, 4)) for i, n in enumerate(sizes)}
        targets = [T(rng.normal(size=(n, 4))) for n in sizes]
        f = lambda t: fn([t[f"p{i}"] for i in range(len(sizes))], targets, 0.2)  # noqa: E731
        worst = max(worst, fd_check(f, arrays, rng, coords=4))
    assert worst < 1e-4


def composition_case(rng):
    """Arrays and a loss closure for tokenize -> encode -> predict -> PatchDisc."""
    cfg = model_config("custom", depth=1, dim=8, heads=2, predictor_depth=1)
    enc = {k: v.data for k, v in init_encoder(cfg, rng, np.float64, trainable=False).items()}
    pred = {k: v.data for k, v in init_predictor(cfg, rng, np.float64, trainable=False).items()}
    sample = generate_synthetic_sample(int(rng.integers(1 << 30)), int(rng.integers(4)), (4, 4, 2))
    groups = (0, 8, 10, 14)
    names = ["proj.S1.w", "embed.group", "block0.attn.wq", "block0.mlp.w1", "norm.g"]
    pnames = ["block0.xattn.wk", "block0.attn.wv", "out.w"]
    arrays = {"e." + n: enc[n] for n in names} | {"p." + n: pred[n] for n in pnames}
    target = T(rng.normal(size=(4, 8)))

    def fn(t):
        ep = {k: T(v) for k, v in enc.items()} | {n: t["e." + n] for n in names}
        pp = {k: T(v) for k, v in pred.items()} | {n: t["p." + n] for n in pnames}
        ts = tokenize(sample, 2, groups, ep)
        online = np.array([0, 3, 9, 12, 14])
        predicted = np.array([1, 5, 10, 13])
        z1 = encode(ts, online, ep, cfg)
        p = predict(ad.gather_rows(ts.e, predicted), z1, pp, cfg)
        return patch_disc_loss(p, target, 0.2)

    return arrays, fn


def test_full_composition_fd():
    rng = np.random.default_rng(5)
    worst = 0.0
    for _ in range(100):
        arrays, fn = composition_case(rng)
        worst = max(worst, fd_check(fn, arrays, rng, coords=2))
    assert worst < 1e-4


# ---------------------------------------------------------------- optimiser pieces

def test_ema_examples():
    t = {"a": T([1.0])}
    ema_update(t, {"a": T([0.0])}, 1.0)
    assert t["a"].data[0] == 1.0
    ema_update(t, {"a": T([0.0])}, 0.996)
    assert abs(t["a"].data[0] - 0.996) < 1e-15
    ema_update(t, {"a": T([5.0])}, 0.0)
    assert t["a"].data[0] == 5.0
    with pytest.raises(ContractError):
        ema_update({"a": T([1.0])}, {"a": T([1.0, 2.0])}, 0.5)


@settings(max_examples=50, deadline=None)
@given(st.floats(0, 1), st.integers(0, 10 ** 6))
def test_ema_betweenness(m, seed):
    rng = np.random.default_rng(seed)
    old, on = rng.normal(size=7), rng.normal(size=7)
    t = {"w": T(old.copy())}
    ema_update(t, {"w": T(on)}, m)
    lo, hi = np.minimum(old, on), np.maximum(old, on)
    assert np.all((t["w"].data >= lo - 1e-15) & (t["w"].data <= hi + 1e-15))


def test_schedule_examples():
    assert schedules(0, 100, 10, 1e-3, 0.996) == (0.0, 0.996)
    lr, _ = schedules(10, 100, 10, 1e-3, 0.996)
    assert lr == 1e-3
    lr, m = schedules(100, 100, 10, 1e-3, 0.996)
    assert abs(lr) < 1e-18 and m == 1.0


@settings(max_examples=50, deadline=None)
@given(st.integers(2, 500), st.floats(0, 0.9), st.floats(1e-5, 1e-2))
def test_schedule_shape(total, wfrac, peak):
    warm = int(wfrac * (total - 1))
    lrs = [schedules(s, total, warm, peak, 0.99)[0] for s in range(total + 1)]
    ms = [schedules(s, total, warm, peak, 0.99)[1] for s in range(total + 1)]
    assert max(lrs) <= peak * (1 + 1e-12) and min(lrs) >= 0
    assert all(b >= a for a, b in zip(ms, ms[1:]))
    assert all(b <= a + 1e-15 for a, b in zip(lrs[warm:], lrs[warm + 1:]))


def test_adamw_zero_lr_and_decay_mask():
    p = {"w": T(np.ones((2, 2))), "b": T(np.ones(2))}
    opt = AdamW(p, weight_decay=0.5)
    opt.step({"w": np.ones((2, 2)), "b": np.ones(2)}, 0.0)
    assert np.all(p["w"].data == 1) and np.all(p["b"].data == 1)
    assert np.any(opt.m["w"] != 0)
    opt.step({}, 0.1)
    assert np.all(p["b"].data == 1) and np.all(p["w"].data < 1)


# ---------------------------------------------------------------- batching

def test_make_batch_shapes(small_corpus):
    slots = make_batch(small_corpus[:6], repeats=3, seed=1, patch_sizes=(2, 4), menu=((2, 2), (1, 4)))
    assert len(slots) == 3 and all(len(s.samples) == 6 for s in slots)
    for s in slots:
        assert all(x.dims == (s.P * s.S, s.P * s.S, s.T) for x in s.samples)
    again = make_batch(small_corpus[:6], repeats=3, seed=1, patch_sizes=(2, 4), menu=((2, 2), (1, 4)))
    for a, b in zip(slots, again):
        assert (a.P, a.S, a.T, a.codes) == (b.P, b.S, b.T, b.codes)
        assert all(x.equals(y) for x, y in zip(a.samples, b.samples))


def test_make_batch_paper_menu_entry():
    s = generate_synthetic_sample(0, 0, (32, 32, 12))
    slots = make_batch([s] * 4, repeats=2, seed=3, patch_sizes=(8,), menu=((4, 12),))
    assert all(x.dims == (32, 32, 12) for sl in slots for x in sl.samples)
    assert sum(len(sl.samples) for sl in slots) == 8


def test_make_batch_clamps():
    s = generate_synthetic_sample(0, 0, (8, 8, 2))
    (slot,) = make_batch([s], repeats=1, seed=0, patch_sizes=(8,), menu=((12, 3),))
    assert (slot.P, slot.S, slot.T) == (8, 1, 2)
    with pytest.raises(ContractError):
        make_batch([s], repeats=0)


# ---------------------------------------------------------------- config

def test_config_parsing(tmp_path):
    cfg = parse_config_text("train.peak_lr = 1e-3  # comment\ntrain.shape_menu = 2x4, 3x3\n")
    assert cfg["train.peak_lr"] == 1e-3 and cfg["train.shape_menu"] == ((2, 4), (3, 3))
    assert "train.peak_lr" in cfg.explicit
    with pytest.raises(ConfigError, match="bogus"):
        parse_config_text("train.bogus = 1\n")
    with pytest.raises(ConfigError):
        parse_config_text("train.steps = many\n")
    with pytest.raises(ConfigError, match="nope.cfg"):
        load_config(tmp_path / "nope.cfg")
    bad = Config()
    bad.set("train.objective", "sideways")
    with pytest.raises(ConfigError):
        bad.validate()
    text = Config().to_text()
    assert parse_config_text(text).values == Config().values


# ---------------------------------------------------------------- loop

def tiny_config(**extra):
    cfg = Config()
    settings_ = {"model.size": "custom", "model.depth": "1", "model.dim": "16", "model.heads": "2",
                 "model.predictor_depth": "1", "train.steps": "4", "train.minibatch": "4",
                 "train.repeats": "2", "train.patch_sizes": "2, 4", "train.shape_menu": "2x2, 1x4",
                 "train.dtype": "float64"}
    settings_.update(extra)
    for k, v in settings_.items():
        cfg.set(k, v)
    return cfg.validate()


def run_steps(cfg, samples, n):
    run = Run.from_config(cfg, len(samples))
    state = init_state(run)
    out = []
    for step in range(n):
        idx = minibatch_indices(len(samples), cfg["train.minibatch"], cfg["train.seed"], step)
        batch = make_batch([samples[i] for i in idx], cfg["train.repeats"],
                           np.random.SeedSequence([cfg["train.seed"], step, 2]),
                           cfg["train.patch_sizes"], cfg["train.shape_menu"])
        state, met = train_step(state, batch, objective_for_step(cfg["train.objective"], step), run)
        out.append(met)
    return state, out


def test_train_step_determinism(small_corpus):
    cfg = tiny_config()
    a, ma = run_steps(cfg, small_corpus, 3)
    b, mb = run_steps(cfg, small_corpus, 3)
    assert [m["loss"] for m in ma] == [m["loss"] for m in mb]
    for k, v in a.tensors().items():
        assert v.tobytes() == b.tensors()[k].tobytes()
    assert [m["objective"] for m in ma] == ["global", "local", "global"]


def test_zero_lr_keeps_online_params(small_corpus):
    cfg = tiny_config(**{"train.peak_lr": "0"})
    run = Run.from_config(cfg, len(small_corpus))
    fresh = init_state(run)
    state, _ = run_steps(cfg, small_corpus, 2)
    for k, v in fresh.online.items():
        assert np.array_equal(v.data, state.online[k].data)
    assert any(np.any(m != 0) for m in state.optimizer.m.values())


def test_stop_gradient_into_ema(small_corpus):
    cfg = tiny_config()
    state, mets = run_steps(cfg, small_corpus, 2)
    assert all(t.grad is None for t in state.ema.values())
    assert all(not t.requires_grad for t in state.ema.values())
    assert all(np.isfinite(m["loss"]) and np.isfinite(m["grad_norm"]) for m in mets)


@pytest.mark.parametrize("extra", [
    {"train.objective": "global-only", "train.global_loss": "AllDisc",
     "train.target_context": "disjoint-groups"},
    {"train.objective": "local-only", "train.local_loss": "MSE", "train.local_exit_depth": "full"},
    {"train.objective": "combined", "train.share_predictors": "true",
     "train.target_context": "decoder+encoder", "train.global_masking": "random+space+time"},
    {"train.dropped_modalities": "S1, NDVI"},
])
def test_train_variants_run(small_corpus, extra):
    _, mets = run_steps(tiny_config(**extra), small_corpus, 3)
    assert all(np.isfinite(m["loss"]) for m in mets)


def test_shared_predictors_are_one_object(small_corpus):
    run = Run.from_config(tiny_config(**{"train.share_predictors": "true"}), 10)
    state = init_state(run)
    assert state.predictors["global"] is state.predictors["local"]


def test_pretrain_zero_steps_is_init(tmp_path, small_corpus):
    cfg = tiny_config(**{"train.steps": "0", "out.dir": str(tmp_path / "run")})
    path = pretrain(cfg, small_corpus)
    _, tensors = load_checkpoint(path)
    state = init_state(Run.from_config(cfg, len(small_corpus)))
    for k, v in state.tensors().items():
        assert np.array_equal(tensors[k], v.astype(np.float32))
    assert (tmp_path / "run" / "metrics.tsv").read_text().startswith("step\tobjective\tloss")


def test_pretrain_log_and_checkpoints(tmp_path, small_corpus):
    cfg = tiny_config(**{"train.steps": "4", "train.checkpoint_every": "2",
                         "out.dir": str(tmp_path / "run")})
    pretrain(cfg, small_corpus)
    lines = (tmp_path / "run" / "metrics.tsv").read_text().splitlines()
    assert len(lines) == 5 and all(len(line.split("\t")) == 6 for line in lines)
    assert (tmp_path / "run" / "step000002.glck").exists()
    assert (tmp_path / "run" / "final.glck").exists()


def test_minibatch_indices_cover_epoch():
    seen = np.concatenate([minibatch_indices(10, 4, 0, s) for s in range(3)])
    assert sorted(seen.tolist()) == list(range(10))


def test_corpus_labels_balanced():
    labels = [s.label for s in generate_corpus(12, 4, 0, (4, 4, 2))]
    assert np.bincount(labels).tolist() == [3, 3, 3, 3]
