import numpy as np
import pytest

from galileo.data import generate_synthetic_sample
from galileo.data.catalog import group_index
from galileo.errors import ConfigError, ContractError, FormatError
from galileo.model import (
    count_parameters,
    depth_map,
    encode,
    init_encoder,
    init_predictor,
    model_config,
    parse_checkpoint,
    predict,
    save_checkpoint,
    load_checkpoint,
    target_encode,
    target_project,
)
from galileo.numerics import autodiff as ad
from galileo.numerics import nn
from galileo.tokenizer import tokenize

ALL = tuple(range(17))
F64 = np.float64


@pytest.fixture(scope="module")
def setup():
    cfg = model_config("custom", depth=3, dim=16, heads=2)
    rng = np.random.default_rng(0)
    enc = init_encoder(cfg, rng, F64, trainable=False)
    pred = init_predictor(cfg, rng, F64, trainable=False)
    s = generate_synthetic_sample(0, 1, (8, 8, 3))
    ts = tokenize(s, 4, ALL, enc)
    return cfg, enc, pred, ts


def truncated(x, params, cfg, n):
    for i in range(n):
        x = nn.transformer_block(x, params, f"block{i}.", cfg.heads)
    if n == cfg.depth and cfg.final_norm:
        x = ad.layer_norm(x, params["norm.g"], params["norm.b"])
    return x


# ---------------------------------------------------------------- configs

def test_presets():
    assert (model_config("nano").depth, model_config("nano").dim, model_config("nano").heads) == (4, 128, 8)
    assert (model_config("tiny").depth, model_config("tiny").dim) == (12, 192)
    assert model_config("base").heads == 12
    with pytest.raises(ConfigError):
        model_config("huge")
    with pytest.raises(ConfigError):
        model_config("custom", dim=30, heads=4)


@pytest.mark.parametrize("size,quoted", [("nano", 0.8e6), ("tiny", 5.3e6), ("base", 85.0e6)])
def test_parameter_counts(size, quoted):
    n = count_parameters(model_config(size))["blocks"]
    assert abs(n - quoted) / quoted < 0.2


def test_depth_map_classes():
    cfg = model_config("nano")
    d = depth_map(cfg, "varied")
    assert d[group_index("DW-probs")] == 0 and d[group_index("WC-maps")] == 0
    assert d[group_index("TerraClimate")] == 2 and d[group_index("S2-RGB")] == 4
    assert np.all(depth_map(cfg, "full") == 4) and np.all(depth_map(cfg, "half") == 2)
    with pytest.raises(ConfigError):
        depth_map(cfg, 9)


# ---------------------------------------------------------------- encode

def test_encode_zero_depth_identity(setup):
    _, enc, _, ts = setup
    cfg0 = model_config("custom", depth=0, dim=16, heads=2)
    idx = np.arange(10)
    assert np.array_equal(encode(ts, idx, enc, cfg0).data, ts.x.data[idx])


def test_encode_permutation_equivariant(setup):
    cfg, enc, _, ts = setup
    idx = np.array([3, 40, 7, 22, 90])
    perm = np.array([2, 0, 4, 1, 3])
    a = encode(ts, idx, enc, cfg).data
    b = encode(ts, idx[perm], enc, cfg).data
    np.testing.assert_allclose(b, a[perm], atol=1e-12)


def test_encode_single_token_oracle(setup):
    cfg, enc, _, ts = setup
    p = {k: v.data for k, v in enc.items()}

    def ln(x, g, b):
        return (x - x.mean()) / np.sqrt(x.var() + 1e-6) * g + b

    def gelu(x):
        return 0.5 * x * (1 + np.tanh(np.sqrt(2 / np.pi) * (x + 0.044715 * x ** 3)))

    x = ts.x.data[5].copy()
    for i in range(cfg.depth):
        pre = f"block{i}."
        h = ln(x, p[pre + "ln1.g"], p[pre + "ln1.b"])
        v = h @ p[pre + "attn.wv"] + p[pre + "attn.bv"]
        x = x + v @ p[pre + "attn.wo"] + p[pre + "attn.bo"]  # one key: weight 1
        h = ln(x, p[pre + "ln2.g"], p[pre + "ln2.b"])
        x = x + gelu(h @ p[pre + "mlp.w1"] + p[pre + "mlp.b1"]) @ p[pre + "mlp.w2"] + p[pre + "mlp.b2"]
    x = ln(x, p["norm.g"], p["norm.b"])
    np.testing.assert_allclose(encode(ts, np.array([5]), enc, cfg).data[0], x, atol=1e-10)


def test_encode_empty_index(setup):
    cfg, enc, _, ts = setup
    with pytest.raises(ContractError):
        encode(ts, np.array([], dtype=int), enc, cfg)


# ---------------------------------------------------------------- target encode

def test_target_encode_zero_and_full(setup):
    cfg, enc, _, ts = setup
    idx = np.array([0, 17, 60, len(ts) - 1])
    zero = target_encode(ts, idx, enc, cfg, np.zeros(17, int)).data
    assert np.array_equal(zero, ts.x.data[idx])
    ctx = np.arange(len(ts))
    full = target_encode(ts, idx, enc, cfg, np.full(17, cfg.depth)).data
    np.testing.assert_allclose(full, encode(ts, ctx, enc, cfg).data[idx], atol=1e-12)
    with pytest.raises(ConfigError):
        target_encode(ts, idx, enc, cfg, np.full(17, cfg.depth + 1))


def test_target_encode_mixed_map(setup):
    cfg, enc, _, _ = setup
    s = generate_synthetic_sample(3, 2, (8, 8, 3))
    groups = (group_index("S2-RGB"), group_index("DW-probs"), group_index("TerraClimate"))
    ts = tokenize(s, 4, groups, enc)
    depths = np.zeros(17, int)
    depths[group_index("TerraClimate")] = cfg.depth // 2
    depths[group_index("S2-RGB")] = cfg.depth
    idx = np.arange(len(ts))
    got = target_encode(ts, idx, enc, cfg, depths).data
    for g in groups:
        rows = np.flatnonzero(ts.meta.group == g)
        ref = truncated(ts.x, enc, cfg, int(depths[g])).data[rows]
        np.testing.assert_allclose(got[rows], ref, atol=1e-12)


def test_target_encode_layer_sweep(setup):
    cfg, enc, _, ts = setup
    idx = np.arange(0, len(ts), 7)
    for ell in range(cfg.depth + 1):
        got = target_encode(ts, idx, enc, cfg, np.full(17, ell)).data
        np.testing.assert_allclose(got, truncated(ts.x, enc, cfg, ell).data[idx], atol=1e-12)


# ---------------------------------------------------------------- target project

def test_target_project(setup):
    cfg, enc, _, ts = setup
    idx = np.array([1, 2, 50])
    zero = target_encode(ts, idx, enc, cfg, np.zeros(17, int)).data
    np.testing.assert_allclose(target_project(ts, idx).data, zero - ts.e.data[idx], atol=1e-12)
    s = generate_synthetic_sample(0, 0, (8, 8, 2), noise=0.0)
    flat = type(s)(np.zeros_like(s.spacetime), s.space, s.time, s.static, s.months)
    t2 = tokenize(flat, 4, (0,), enc)
    proj = target_project(t2, np.arange(len(t2))).data
    assert np.array_equal(proj, np.broadcast_to(enc["proj.S1.b"].data, proj.shape))


# ---------------------------------------------------------------- predictor

def test_predict_context_permutation(setup):
    cfg, _, pred, ts = setup
    rng = np.random.default_rng(1)
    e2 = ad.Tensor(rng.normal(size=(4, 16)))
    z1 = rng.normal(size=(6, 16))
    perm = rng.permutation(6)
    a = predict(e2, ad.Tensor(z1), pred, cfg).data
    b = predict(e2, ad.Tensor(z1[perm]), pred, cfg).data
    np.testing.assert_allclose(a, b, atol=1e-12)
    qp = np.array([3, 1, 0, 2])
    c = predict(ad.Tensor(e2.data[qp]), ad.Tensor(z1), pred, cfg).data
    np.testing.assert_allclose(c, a[qp], atol=1e-12)


def test_predict_single_context(setup):
    cfg, _, pred, _ = setup
    rng = np.random.default_rng(2)
    q = ad.Tensor(rng.normal(size=(3, 16)))
    z = ad.Tensor(rng.normal(size=(1, 16)))
    h = ad.layer_norm(q, pred["block0.ln_q.g"], pred["block0.ln_q.b"])
    c = ad.layer_norm(z, pred["block0.ln_ctx.g"], pred["block0.ln_ctx.b"])
    _, A = nn.multi_head_attention(h, c, c, cfg.heads, pred, "block0.xattn.", return_weights=True)
    assert np.allclose(A.data, 1.0)
    assert predict(q, z, pred, cfg).shape == (3, 16)
    with pytest.raises(ContractError):
        predict(q, ad.Tensor(np.zeros((0, 16))), pred, cfg)


def test_predict_loop_oracle():
    cfg = model_config("custom", depth=1, dim=8, heads=2, predictor_depth=1)
    pred = init_predictor(cfg, np.random.default_rng(3), F64, trainable=False)
    p = {k: v.data for k, v in pred.items()}
    rng = np.random.default_rng(4)
    e2, z1 = rng.normal(size=(2, 8)), rng.normal(size=(3, 8))
    from test_numerics import loop_attention

    def ln(x, name):
        mu = x.mean(axis=1, keepdims=True)
        return (x - mu) / np.sqrt(x.var(axis=1, keepdims=True) + 1e-6) * p[name + ".g"] + p[name + ".b"]

    def gelu(x):
        return 0.5 * x * (1 + np.tanh(np.sqrt(2 / np.pi) * (x + 0.044715 * x ** 3)))

    sub = lambda pre: {k[len(pre):]: v for k, v in p.items() if k.startswith(pre)}  # noqa: E731
    q = e2
    h, c = ln(q, "block0.ln_q"), ln(z1, "block0.ln_ctx")
    q = q + loop_attention(h, c, c, 2, sub("block0.xattn."))
    h = ln(q, "block0.ln1")
    q = q + loop_attention(h, h, h, 2, sub("block0.attn."))
    h = ln(q, "block0.ln2")
    q = q + gelu(h @ p["block0.mlp.w1"] + p["block0.mlp.b1"]) @ p["block0.mlp.w2"] + p["block0.mlp.b2"]
    ref = ln(q, "norm") @ p["out.w"] + p["out.b"]
    np.testing.assert_allclose(predict(ad.Tensor(e2), ad.Tensor(z1), pred, cfg).data, ref, atol=1e-12)


# ---------------------------------------------------------------- checkpoints

def test_checkpoint_round_trip(tmp_path, setup):
    _, enc, _, _ = setup
    tensors = {k: v.data.astype(np.float32) for k, v in enc.items()}
    buf = save_checkpoint(tmp_path / "a.glck", "model.size = custom\n", tensors)
    text, back = load_checkpoint(tmp_path / "a.glck")
    assert text == "model.size = custom\n"
    assert set(back) == set(tensors)
    for k in tensors:
        assert back[k].tobytes() == tensors[k].tobytes() and back[k].shape == tensors[k].shape
    again = save_checkpoint(tmp_path / "b.glck", text, back)
    assert again == buf


def test_checkpoint_errors():
    buf = save_checkpoint("/dev/null", "x", {"a": np.ones((2, 3), np.float32)})
    with pytest.raises(FormatError):
        parse_checkpoint(b"NOPE" + buf[4:])
    with pytest.raises(FormatError):
        parse_checkpoint(buf[:-3])
    with pytest.raises(FormatError):
        parse_checkpoint(buf + b"\0")
