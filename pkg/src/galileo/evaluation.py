"""Frozen-feature evaluation: embeddings, kNN and linear probes, similarity, MACs."""

from dataclasses import dataclass

import numpy as np

from galileo.data.catalog import KINDS, SPACE, SPACE_TIME, block_channels, canonical_channel_groups
from galileo.data.sample import NormStats, normalize
from galileo.errors import ConfigError, ContractError
from galileo.model import encode, load_checkpoint, model_config
from galileo.numerics import autodiff as ad
from galileo.numerics import kernels
from galileo.tokenizer import token_count, tokenize_batch

DEFAULT_LR_GRID = tuple(m * 10.0 ** e for e in (-4, -3, -2, -1) for m in (1, 3, 4, 5))


@dataclass
class FeatureMatrix:
    rows: np.ndarray  # [n, D]
    labels: np.ndarray  # [n]

    def __post_init__(self):
        self.rows = np.asarray(self.rows, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.rows.ndim != 2 or len(self.rows) != len(self.labels):
            raise ContractError("feature rows and labels disagree in count")
        if not np.all(np.isfinite(self.rows)):
            raise ContractError("feature matrix has non-finite entries")

    def __len__(self):
        return len(self.labels)


# ---------------------------------------------------------------- loading / embedding

@dataclass
class Encoder:
    model: object
    params: dict
    stats: NormStats | None
    groups: tuple
    config: object


def load_encoder(path):
    """The online encoder, normalisation stats and group set stored in a checkpoint."""
    from galileo.data.catalog import groups_without
    from galileo.training.config import parse_config_text

    text, tensors = load_checkpoint(path)
    cfg = parse_config_text(text, str(path))
    overrides = {k: cfg[f"model.{k}"] for k in ("depth", "dim", "heads") if cfg[f"model.{k}"] >= 0}
    mcfg = model_config(cfg["model.size"], predictor_depth=cfg["model.predictor_depth"],
                        final_norm=cfg["model.final_norm"], **overrides)
    params = {k[len("online."):]: ad.Tensor(v) for k, v in tensors.items()
              if k.startswith("online.")}
    expected = {f"proj.{g.name}.w" for g in canonical_channel_groups()}
    missing = expected - set(params)
    if missing:
        raise ConfigError(f"checkpoint lacks projections for {sorted(missing)[:3]}...")
    stats = None
    if "stats.mean" in tensors:
        names = [n for k in KINDS for n in block_channels()[k]]
        mean, std = tensors["stats.mean"], tensors["stats.std"]
        if len(mean) != len(names):
            raise ConfigError("checkpoint normalisation stats do not match the channel catalog")
        stats = NormStats(dict(zip(names, map(float, mean))), dict(zip(names, map(float, std))))
    groups = tuple(groups_without(cfg["train.dropped_modalities"]))
    return Encoder(mcfg, params, stats, groups, cfg)


def _as_encoder(enc):
    return load_encoder(enc) if not isinstance(enc, Encoder) else enc


def _batches(samples, size):
    """Consecutive runs of same-dims samples, at most ``size`` long."""
    i = 0
    while i < len(samples):
        dims = samples[i].dims
        j = i + 1
        while j < len(samples) and j - i < size and samples[j].dims == dims:
            j += 1
        yield i, samples[i:j]
        i = j


def token_encodings(enc, samples, P, batch_size=16, groups=None):
    """Full-depth online encodings of every token: one [L, D] array per sample."""
    enc = _as_encoder(enc)
    groups = enc.groups if groups is None else tuple(groups)
    out = []
    for _, chunk in _batches(list(samples), batch_size):
        if enc.stats is not None:
            chunk = [normalize(s, enc.stats) for s in chunk]
        H, W, _ = chunk[0].dims
        if H % P or W % P:
            raise ContractError(f"patch size {P} does not divide {H}x{W}")
        ts = tokenize_batch(chunk, P, groups, enc.params)
        z = encode(ts, np.arange(ts.x.shape[1]), enc.params, enc.model)
        out.extend(np.asarray(z.data, dtype=np.float64))
    return out


def embed_dataset(enc, samples, P, batch_size=16):
    """Mean-pooled token encodings, one row per sample."""
    samples = list(samples)
    if not samples:
        return FeatureMatrix(np.zeros((0, _as_encoder(enc).model.dim)), np.zeros(0))
    toks = token_encodings(enc, samples, P, batch_size)
    labels = [-1 if s.label is None else s.label for s in samples]
    return FeatureMatrix(np.stack([t.mean(axis=0) for t in toks]), labels)


def raw_pixel_features(samples, stats=None):
    """Flattened (optionally standardised) sample arrays: the no-learning baseline."""
    rows = []
    for s in samples:
        if stats is not None:
            s = normalize(s, stats)
        rows.append(np.concatenate([b.reshape(-1) for b in s.blocks().values()]))
    labels = [-1 if s.label is None else s.label for s in samples]
    return FeatureMatrix(np.stack(rows).astype(np.float64), labels)


# ---------------------------------------------------------------- probes

def _unit_rows(x):
    n = np.linalg.norm(x, axis=1, keepdims=True)
    return x / np.where(n > 0, n, 1.0)


def knn_probe(train, test, k=20):
    """Top-1 accuracy of a cosine k-nearest-neighbour majority vote.

    Neighbours are ranked by similarity, then by train index. Vote ties go
    to the class holding the most similar neighbour, then the lowest id.
    """
    if len(train) == 0:
        raise ContractError("kNN probe needs a non-empty train set")
    if not 1 <= k <= len(train):
        raise ContractError(f"k={k} must lie in 1..{len(train)}")
    if len(test) == 0:
        return float("nan")
    preds = knn_predict(train, test, k)
    return float(np.mean(preds == test.labels))


def knn_predict(train, test, k=20):
    sims = np.ascontiguousarray(_unit_rows(test.rows) @ _unit_rows(train.rows).T)
    n_classes = int(max(train.labels.max(), test.labels.max())) + 1
    return kernels.knn_vote(sims, np.ascontiguousarray(train.labels), k, n_classes)


def _softmax_rows(z):
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _fit_softmax(x, y, n_classes, lr, epochs):
    W = np.zeros((x.shape[1], n_classes))
    b = np.zeros(n_classes)
    onehot = np.eye(n_classes)[y]
    for _ in range(epochs):
        g = (_softmax_rows(x @ W + b) - onehot) / len(y)
        W -= lr * (x.T @ g)
        b -= lr * g.sum(axis=0)
    return W, b


def linear_probe(train, test, lr_grid=DEFAULT_LR_GRID, epochs=500, holdout=0.2, seed=0):
    """Softmax regression by full-batch gradient descent on standardised features.

    The learning rate is picked on a held-out ``holdout`` share of the train
    rows; the probe is then refit on all train rows and scored on ``test``.
    """
    classes = np.unique(train.labels)
    if len(classes) < 2:
        raise ContractError("linear probe needs at least 2 classes in the train set")
    n_classes = int(max(train.labels.max(), test.labels.max() if len(test) else 0)) + 1
    mu = train.rows.mean(axis=0)
    sd = train.rows.std(axis=0)
    sd = np.where(sd > 0, sd, 1.0)
    xtr = (train.rows - mu) / sd
    xte = (test.rows - mu) / sd
    rng = np.random.default_rng(seed)
    perm = rng.permutation(len(train))
    n_hold = max(1, int(round(holdout * len(train))))
    hold, fit = perm[:n_hold], perm[n_hold:]
    if len(fit) == 0:
        fit = hold
    best_lr, best_acc = None, -1.0
    for lr in lr_grid:
        W, b = _fit_softmax(xtr[fit], train.labels[fit], n_classes, lr, epochs)
        acc = np.mean(np.argmax(xtr[hold] @ W + b, axis=1) == train.labels[hold])
        if acc > best_acc + 1e-12:
            best_lr, best_acc = lr, acc
    W, b = _fit_softmax(xtr, train.labels, n_classes, best_lr, epochs)
    if len(test) == 0:
        return float("nan")
    return float(np.mean(np.argmax(xte @ W + b, axis=1) == test.labels))


# ---------------------------------------------------------------- similarity

def similarity_stats(token_sets):
    """(within, between) mean pairwise cosine similarities, self pairs excluded.

    ``within`` averages, over samples, the similarity among that sample's
    token encodings; ``between`` compares the per-sample mean vectors.
    """
    if len(token_sets) < 2:
        raise ContractError("between-sample similarity needs at least 2 samples")
    within = []
    for z in token_sets:
        z = np.asarray(z, dtype=np.float64)
        L = len(z)
        if L < 2:
            raise ContractError("each sample needs at least 2 tokens")
        u = _unit_rows(z)
        s = u.sum(axis=0)
        # sum over all ordered pairs minus the diagonal
        within.append((s @ s - np.sum(u * u)) / (L * (L - 1)))
    means = _unit_rows(np.stack([np.asarray(z).mean(axis=0) for z in token_sets]))
    n = len(means)
    s = means.sum(axis=0)
    between = (s @ s - np.sum(means * means)) / (n * (n - 1))
    return float(np.mean(within)), float(between)


def checkpoint_similarity(enc, samples, P, batch_size=16):
    return similarity_stats(token_encodings(enc, samples, P, batch_size))


# ---------------------------------------------------------------- cost model

def estimate_macs(cfg, dims, P, groups=None):
    """Multiply-accumulates to encode one instance; softmax and norms are ignored.

    Per token a projection of its patch; per block ``12 L D^2`` for the
    attention and MLP matrices plus ``2 L^2 D`` for logits and value mixing.
    """
    H, W, T = dims
    if H % P or W % P:
        raise ContractError(f"patch size {P} does not divide {H}x{W}")
    specs = canonical_channel_groups()
    groups = range(len(specs)) if groups is None else groups
    D = cfg.dim
    L = token_count(H, W, T, P, groups)
    cells = (H // P) * (W // P)
    proj = 0
    for g in groups:
        spec = specs[g]
        C = len(spec.channels)
        if spec.kind == SPACE_TIME:
            proj += cells * T * P * P * C * D
        elif spec.kind == SPACE:
            proj += cells * P * P * C * D
        elif spec.kind == "time":
            proj += T * C * D
        else:
            proj += C * D
    blocks = cfg.depth * (12 * L * D * D + 2 * L * L * D)
    return int(proj + blocks)


def optical_groups():
    return [i for i, g in enumerate(canonical_channel_groups()) if g.modality == "S2"]


# ---------------------------------------------------------------- reports

def write_report(path, rows):
    """Plain-text ``metric<TAB>value`` table."""
    with open(path, "w") as f:
        f.write("metric\tvalue\n")
        for k, v in rows:
            f.write(f"{k}\t{v:.6g}\n" if isinstance(v, float) else f"{k}\t{v}\n")


def write_curve(path, points):
    """Two whitespace-separated columns, gnuplot friendly."""
    with open(path, "w") as f:
        f.write("# macs accuracy\n")
        for x, y in points:
            f.write(f"{x} {y:.6g}\n")
