"""Encoder, EMA target encoder with per-group exits, predictor, checkpoints."""

import struct
from dataclasses import dataclass, fields, replace

import numpy as np

from galileo.data.catalog import (
    FULL_DEPTH,
    HALF_DEPTH,
    PROJECTION_ONLY,
    SPACE,
    SPACE_TIME,
    canonical_channel_groups,
)
from galileo.errors import ConfigError, ContractError, FormatError
from galileo.numerics import autodiff as ad
from galileo.numerics import nn
from galileo.tokenizer import CANONICAL_P, init_tokenizer_params


@dataclass(frozen=True)
class ModelConfig:
    depth: int = 2
    dim: int = 64
    heads: int = 4
    predictor_depth: int = 2
    final_norm: bool = True
    name: str = "custom"

    def __post_init__(self):
        if self.depth < 0 or self.predictor_depth < 1:
            raise ConfigError("encoder depth must be >= 0 and predictor depth >= 1")
        if self.dim < 4 or self.dim % 4:
            raise ConfigError(f"model width {self.dim} must be a positive multiple of 4")
        if self.heads < 1 or self.dim % self.heads:
            raise ConfigError(f"width {self.dim} is not divisible by {self.heads} heads")


PRESETS = {
    "nano": ModelConfig(4, 128, 8, name="nano"),
    "tiny": ModelConfig(12, 192, 3, name="tiny"),
    "base": ModelConfig(12, 768, 12, name="base"),
    "nano-mini": ModelConfig(2, 64, 4, name="nano-mini"),
}


def model_config(size="nano-mini", **overrides):
    if size not in PRESETS and size != "custom":
        raise ConfigError(f"unknown model size {size!r}; choose from {sorted(PRESETS)} or custom")
    base = PRESETS.get(size, ModelConfig())
    known = {f.name for f in fields(ModelConfig)}
    bad = set(overrides) - known
    if bad:
        raise ConfigError(f"unknown model options {sorted(bad)}")
    return replace(base, **overrides)


# ---------------------------------------------------------------- parameters

def _as_tensors(raw, trainable):
    return {k: ad.Tensor(v, requires_grad=trainable, name=k) for k, v in raw.items()}


def init_encoder(cfg, rng, dtype=np.float32, trainable=True):
    raw = {}
    init_tokenizer_params(raw, rng, cfg.dim, dtype)
    for i in range(cfg.depth):
        nn.init_transformer_block(raw, rng, f"block{i}.", cfg.dim, dtype)
    nn.init_ln(raw, "norm", cfg.dim, dtype)
    return _as_tensors(raw, trainable)


def init_predictor(cfg, rng, dtype=np.float32, trainable=True):
    raw = {}
    for i in range(cfg.predictor_depth):
        nn.init_cross_block(raw, rng, f"block{i}.", cfg.dim, dtype)
    nn.init_ln(raw, "norm", cfg.dim, dtype)
    raw["out.w"] = nn._xavier(rng, cfg.dim, cfg.dim, dtype)
    raw["out.b"] = np.zeros(cfg.dim, dtype=dtype)
    return _as_tensors(raw, trainable)


def copy_params(params, trainable=False):
    return {k: ad.Tensor(v.data.copy(), requires_grad=trainable, name=k) for k, v in params.items()}


def block_param_count(cfg):
    """Parameters in the transformer blocks alone (the size quoted for model presets)."""
    D = cfg.dim
    return cfg.depth * (12 * D * D + 13 * D)


def count_parameters(cfg):
    """Analytic parameter counts; nothing is allocated."""
    D = cfg.dim
    specs = canonical_channel_groups()
    proj = 0
    for g in specs:
        C = len(g.channels)
        fan_in = CANONICAL_P * CANONICAL_P * C if g.kind in (SPACE_TIME, SPACE) else C
        proj += fan_in * D + D
    embed = (12 + len(specs)) * D
    blocks = block_param_count(cfg)
    encoder = proj + embed + blocks + 2 * D
    pred_block = 4 * D + (4 * D * D + 4 * D) + 12 * D * D + 13 * D
    predictor = cfg.predictor_depth * pred_block + 2 * D + D * D + D
    return {"tokenizer": proj + embed, "blocks": blocks, "encoder": encoder,
            "predictor": predictor}


# ---------------------------------------------------------------- exit depths

def depth_map(cfg, policy="varied"):
    """Exit layer for each of the 17 catalog groups.

    ``varied`` follows each group's exit class; ``half``, ``full`` or an
    integer apply one layer to every group.
    """
    B = cfg.depth
    n = len(canonical_channel_groups())
    if policy == "varied":
        by_class = {PROJECTION_ONLY: 0, HALF_DEPTH: B // 2, FULL_DEPTH: B}
        return np.array([by_class[g.exit_class] for g in canonical_channel_groups()])
    if policy == "half":
        level = B // 2
    elif policy == "full":
        level = B
    else:
        try:
            level = int(policy)
        except (TypeError, ValueError):
            raise ConfigError(f"unknown exit depth policy {policy!r}") from None
    if not 0 <= level <= B:
        raise ConfigError(f"exit depth {level} outside 0..{B}")
    return np.full(n, level)


# ---------------------------------------------------------------- forward passes

def _as_batch_idx(x, idx):
    idx = np.asarray(idx, dtype=np.int64)
    if x.ndim == 2:
        if idx.ndim != 1:
            raise ContractError("unbatched tokens need a 1D index")
        if idx.size == 0:
            raise ContractError("empty token index")
        return idx
    if idx.ndim == 1:
        idx = np.broadcast_to(idx, (x.shape[0], idx.size))
    if idx.shape[-1] == 0:
        raise ContractError("empty token index")
    return idx


def _blocks(x, params, cfg, upto=None, cache=None):
    upto = cfg.depth if upto is None else upto
    for i in range(upto):
        x = nn.transformer_block(x, params, f"block{i}.", cfg.heads)
        if cache is not None:
            cache.append(x)
    return x


def _final_norm(x, params, cfg):
    if cfg.final_norm and cfg.depth > 0:
        return ad.layer_norm(x, params["norm.g"], params["norm.b"])
    return x


def encode(ts, idx, params, cfg):
    """Full-depth encoding of the tokens ``idx`` attending only to each other."""
    idx = _as_batch_idx(ts.x, idx)
    x = ad.gather_rows(ts.x, idx)
    return _final_norm(_blocks(x, params, cfg), params, cfg)


def _positions(context, idx):
    pos = np.searchsorted(context, idx)
    if np.any(pos >= len(context)) or np.any(context[np.minimum(pos, len(context) - 1)] != idx):
        raise ContractError("target index not contained in the target context")
    return pos


def target_encode(ts, idx, params, cfg, depths, context=None):
    """Rows of ``idx`` read from each token's group exit layer.

    The encoder runs over ``context`` (sorted token indices, default all)
    and the output of every block is cached; layer 0 is the projection
    plus embeddings and layer ``depth`` includes the final norm.
    """
    depths = np.asarray(depths)
    if depths.max(initial=0) > cfg.depth or depths.min(initial=0) < 0:
        raise ConfigError(f"exit depths must lie in 0..{cfg.depth}")
    batched = ts.x.ndim == 3
    L = ts.x.shape[-2]
    context = np.arange(L) if context is None else np.asarray(context, dtype=np.int64)
    idx = _as_batch_idx(ts.x, idx)
    if batched:
        if context.ndim == 1:
            context = np.broadcast_to(context, (ts.x.shape[0], context.size))
        pos = np.stack([_positions(c, i) for c, i in zip(context, idx)])
    else:
        pos = _positions(context, idx)
    layer = depths[ts.meta.group[idx]]
    needed = int(layer.max())
    x0 = ad.gather_rows(ts.x, context)
    cache = [x0]
    _blocks(x0, params, cfg, upto=needed, cache=cache)
    if needed == cfg.depth:
        cache[-1] = _final_norm(cache[-1], params, cfg)
    out = None
    for ell in np.unique(layer):
        rows = ad.gather_rows(cache[ell], pos)
        sel = (layer == ell).astype(rows.dtype)[..., None]
        part = ad.mul(rows, sel)
        out = part if out is None else ad.add(out, part)
    return out


def target_project(ts, idx, params=None, cfg=None):
    """Pixel-space targets: per-group projections with no embeddings and no blocks."""
    return ad.gather_rows(ts.proj, _as_batch_idx(ts.proj, idx))


def predict(e2, z1, params, cfg):
    """Queries ``e2`` cross-attend to the online encodings ``z1``."""
    if z1.shape[-2] < 1:
        raise ContractError("predictor needs at least one context token")
    if e2.shape[-2] < 1:
        raise ContractError("predictor needs at least one query")
    q = e2
    for i in range(cfg.predictor_depth):
        q = nn.cross_block(q, z1, params, f"block{i}.", cfg.heads)
    q = ad.layer_norm(q, params["norm.g"], params["norm.b"])
    return nn.linear(q, params["out.w"], params["out.b"])


# ---------------------------------------------------------------- GLCK checkpoints

CK_MAGIC = b"GLCK"
CK_VERSION = 1


def save_checkpoint(path, config_text, tensors):
    """Write named float32 tensors (sorted by name) with a config text block."""
    cfg = config_text.encode("utf-8")
    out = [CK_MAGIC, struct.pack("<H", CK_VERSION), struct.pack("<I", len(cfg)), cfg,
           struct.pack("<I", len(tensors))]
    for name in sorted(tensors):
        arr = tensors[name]
        arr = arr.data if isinstance(arr, ad.Tensor) else np.asarray(arr)
        b = name.encode("utf-8")
        out.append(struct.pack("<I", len(b)) + b)
        out.append(struct.pack("<I", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
        out.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    data = b"".join(out)
    with open(path, "wb") as f:
        f.write(data)
    return data


def load_checkpoint(path):
    """(config_text, {name: float32 array})."""
    try:
        with open(path, "rb") as f:
            buf = f.read()
    except OSError as exc:
        from galileo.errors import DataError
        raise DataError(f"cannot read checkpoint {path}: {exc}") from exc
    return parse_checkpoint(buf)


def parse_checkpoint(buf):
    pos = 0

    def take(n, what):
        nonlocal pos
        if pos + n > len(buf):
            raise FormatError(f"truncated GLCK data while reading {what}", pos)
        chunk = buf[pos:pos + n]
        pos += n
        return chunk

    if take(4, "magic") != CK_MAGIC:
        raise FormatError("bad magic, not a GLCK file", 0)
    (version,) = struct.unpack("<H", take(2, "version"))
    if version != CK_VERSION:
        raise FormatError(f"unsupported GLCK version {version}", 4)
    (n_cfg,) = struct.unpack("<I", take(4, "config length"))
    config_text = take(n_cfg, "config").decode("utf-8")
    (count,) = struct.unpack("<I", take(4, "tensor count"))
    tensors = {}
    for _ in range(count):
        (n,) = struct.unpack("<I", take(4, "name length"))
        name = take(n, "name").decode("utf-8")
        (ndim,) = struct.unpack("<I", take(4, "ndim"))
        shape = struct.unpack(f"<{ndim}I", take(4 * ndim, "shape"))
        size = int(np.prod(shape)) if ndim else 1
        data = np.frombuffer(take(4 * size, f"tensor {name}"), dtype="<f4")
        tensors[name] = data.astype(np.float32).reshape(shape)
    if pos != len(buf):
        raise FormatError("trailing bytes after last tensor", pos)
    return config_text, tensors
