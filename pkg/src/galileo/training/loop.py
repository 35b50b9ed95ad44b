"""Training state, the alternating dual-objective step, and the pretraining driver."""

import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from galileo.data.catalog import groups_without
from galileo.data.io import load_dataset
from galileo.data.sample import compute_stats, normalize
from galileo.errors import DataError, NumericalAbort
from galileo.model import (
    copy_params,
    depth_map,
    encode,
    init_encoder,
    init_predictor,
    model_config,
    predict,
    save_checkpoint,
    target_encode,
    target_project,
)
from galileo.numerics import autodiff as ad
from galileo.tokenizer import TokenSet, tokenize_batch
from galileo.training.batching import make_batch
from galileo.training.losses import get_loss
from galileo.training.optim import AdamW, ema_update, global_norm, schedules
from galileo.views import build_views, strategy_cycle


@dataclass
class Run:
    """Settings derived once from a Config."""

    config: object
    model: object
    groups: tuple
    total_steps: int
    warmup_steps: int
    dtype: type
    global_depths: np.ndarray
    local_depths: np.ndarray | None  # None: pixel-space (projection) targets
    dump_dir: Path | None = None

    @classmethod
    def from_config(cls, config, n_samples=None, dump_dir=None):
        c = config
        overrides = {k: c[f"model.{k}"] for k in ("depth", "dim", "heads") if c[f"model.{k}"] >= 0}
        mcfg = model_config(c["model.size"], predictor_depth=c["model.predictor_depth"],
                            final_norm=c["model.final_norm"], **overrides)
        steps = c["train.steps"]
        per_epoch = math.ceil(n_samples / c["train.minibatch"]) if n_samples else 1
        if c["train.epochs"] > 0:
            steps = int(round(c["train.epochs"] * per_epoch))
        if c["train.warmup_epochs"] >= 0:
            warmup = int(round(c["train.warmup_epochs"] * per_epoch))
        else:
            warmup = int(round(c["train.warmup_fraction"] * steps))
        warmup = min(warmup, max(steps - 1, 0))
        local = c["train.local_exit_depth"]
        local_depths = None if local == "0" else depth_map(mcfg, local)
        return cls(c, mcfg, tuple(groups_without(c["train.dropped_modalities"])), steps, warmup,
                   np.float32 if c["train.dtype"] == "float32" else np.float64,
                   depth_map(mcfg, c["train.global_exit_depth"]), local_depths,
                   None if dump_dir is None else Path(dump_dir))


@dataclass
class TrainState:
    online: dict
    ema: dict
    predictors: dict  # objective -> params; one shared dict when predictors are shared
    optimizer: AdamW
    step: int = 0
    seed: int = 0
    calls: dict = field(default_factory=lambda: {"global": 0, "local": 0})

    def trainable(self):
        out = {f"online.{k}": v for k, v in self.online.items()}
        seen = set()
        for obj, params in self.predictors.items():
            if id(params) in seen:
                continue
            seen.add(id(params))
            out.update({f"predictor.{obj}.{k}": v for k, v in params.items()})
        return out

    def tensors(self):
        """Everything a checkpoint stores, by name."""
        out = {f"online.{k}": v.data for k, v in self.online.items()}
        out.update({f"ema.{k}": v.data for k, v in self.ema.items()})
        for obj in ("global", "local"):
            out.update({f"predictor.{obj}.{k}": v.data for k, v in self.predictors[obj].items()})
        return out


def init_state(run):
    c = run.config
    rng = np.random.default_rng(np.random.SeedSequence([c["train.seed"], 0x5EED]))
    online = init_encoder(run.model, rng, run.dtype)
    ema = copy_params(online)
    g = init_predictor(run.model, rng, run.dtype)
    loc = g if c["train.share_predictors"] else init_predictor(run.model, rng, run.dtype)
    state = TrainState(online, ema, {"global": g, "local": loc}, None, 0, c["train.seed"])
    state.optimizer = AdamW(state.trainable(), weight_decay=c["train.weight_decay"])
    return state


def objective_for_step(objective, step):
    if objective == "global-only":
        return "global"
    if objective == "local-only":
        return "local"
    return "global" if step % 2 == 0 else "local"


# ---------------------------------------------------------------- one step

def _item(ts, b):
    """Item ``b`` of a batched TokenSet as an unbatched one."""
    B, L, D = ts.x.shape

    def pick(t):
        return ad.reshape(ad.take(ad.reshape(t, (B, L * D)), [b]), (L, D))

    meta = type(ts.meta)(ts.meta.group, ts.meta.row, ts.meta.col, ts.meta.timestep,
                         ts.meta.month[b])
    return TokenSet(pick(ts.x), pick(ts.e), pick(ts.proj), meta, ts.patch_size, ts.grid, ts.groups)


def _target_norm(t):
    D = t.shape[-1]
    one = ad.Tensor(np.ones(D, dtype=t.dtype))
    zero = ad.Tensor(np.zeros(D, dtype=t.dtype))
    return ad.layer_norm(t, one, zero)


def _forward(state, run, ts_on, ts_tg, objective, online, predicted, context):
    mcfg = run.model
    z1 = encode(ts_on, online, state.online, mcfg)
    e2 = ad.gather_rows(ts_on.e, predicted)
    p = predict(e2, z1, state.predictors[objective], mcfg)
    if objective == "global":
        t = target_encode(ts_tg, predicted, state.ema, mcfg, run.global_depths, context)
    elif run.local_depths is None:
        t = target_project(ts_tg, predicted)
    else:
        t = target_encode(ts_tg, predicted, state.ema, mcfg, run.local_depths, context)
    if run.config["model.target_norm"]:
        t = _target_norm(t)
    return p, ad.Tensor(t.data)  # stop-gradient


def slot_loss(state, run, slot, objective, strategy, seed):
    c = run.config
    ts_on = tokenize_batch(slot.samples, slot.P, run.groups, state.online)
    ts_tg = tokenize_batch(slot.samples, slot.P, run.groups, state.ema)
    context_mode = c["train.target_context"] if objective == "global" else "all"
    B = len(slot.samples)
    seeds = np.random.SeedSequence(seed).generate_state(B, dtype=np.uint64)
    views = [build_views(ts_on, strategy, context_mode, int(s), c["train.mask_ratio"])
             for s in seeds]
    fallbacks = sum(v.fallback for v in views)
    loss_fn = get_loss(c[f"train.{objective}_loss"])
    uniform = all(len(v.online_tokens) == len(views[0].online_tokens)
                  and len(v.predicted_tokens) == len(views[0].predicted_tokens)
                  and len(v.target_tokens) == len(views[0].target_tokens) for v in views)
    if uniform:
        stack = lambda name: np.stack([getattr(v, name) for v in views])  # noqa: E731
        p, t = _forward(state, run, ts_on, ts_tg, objective, stack("online_tokens"),
                        stack("predicted_tokens"), stack("target_tokens"))
        return loss_fn(p, t, c["train.tau"]), fallbacks
    ps, ts = [], []
    for b, v in enumerate(views):
        p, t = _forward(state, run, _item(ts_on, b), _item(ts_tg, b), objective,
                        v.online_tokens, v.predicted_tokens, v.target_tokens)
        ps.append(p)
        ts.append(t)
    return loss_fn(ps, ts, c["train.tau"]), fallbacks


def _dump(run, state, metrics):
    if run.dump_dir is None:
        return None
    run.dump_dir.mkdir(parents=True, exist_ok=True)
    path = run.dump_dir / f"nan_dump_step{state.step:06d}.npz"
    arrays = {k.replace(".", "/"): v for k, v in state.tensors().items()}
    np.savez(path, **arrays, metrics=np.array(repr(metrics)))
    return str(path)


def train_step(state, batch, objective, run):
    """One optimizer update on ``batch`` (a list of BatchSlot) for ``objective``."""
    c = run.config
    lr, m = schedules(state.step, run.total_steps, run.warmup_steps, c["train.peak_lr"],
                      c["train.ema_m0"])
    cycle = strategy_cycle(c[f"train.{objective}_masking"])
    strategy = cycle[state.calls[objective] % len(cycle)]
    seeds = np.random.SeedSequence([state.seed, state.step, 1]).generate_state(
        len(batch), dtype=np.uint64)
    trainable = state.trainable()
    with ad.Graph() as graph:
        total, fallbacks = None, 0
        for slot, s in zip(batch, seeds):
            loss, fb = slot_loss(state, run, slot, objective, strategy, int(s))
            fallbacks += fb
            total = loss if total is None else ad.add(total, loss)
        total = ad.mul(total, 1.0 / len(batch))
    loss_value = float(total.data)
    metrics = {"step": state.step, "objective": objective, "loss": loss_value, "lr": lr,
               "m": m, "grad_norm": float("nan"), "strategy": strategy, "fallbacks": fallbacks}
    if not math.isfinite(loss_value):
        raise NumericalAbort(f"non-finite loss at step {state.step}", _dump(run, state, metrics))
    by_id = {id(t): name for name, t in trainable.items()}
    grads = {by_id[id(leaf)]: g for leaf, g in ad.backward(graph, total).items() if id(leaf) in by_id}
    for t in trainable.values():
        t.grad = None
    norm = global_norm(grads.values())
    metrics["grad_norm"] = norm
    if not math.isfinite(norm):
        raise NumericalAbort(f"non-finite gradient norm at step {state.step}",
                             _dump(run, state, metrics))
    clip = c["train.grad_clip"]
    if norm > clip:
        scale = clip / norm
        grads = {k: g * scale for k, g in grads.items()}
    state.optimizer.step(grads, lr)
    ema_update(state.ema, state.online, m)
    state.calls[objective] += 1
    state.step += 1
    return state, metrics


# ---------------------------------------------------------------- driver

def stats_vectors(stats):
    from galileo.data.catalog import KINDS
    mean = np.concatenate([stats.vectors(k)[0] for k in KINDS])
    std = np.concatenate([stats.vectors(k)[1] for k in KINDS])
    return mean, std


def checkpoint_tensors(state, stats):
    tensors = state.tensors()
    mean, std = stats_vectors(stats)
    tensors["stats.mean"] = mean
    tensors["stats.std"] = std
    return tensors


def minibatch_indices(n, minibatch, seed, step):
    """Sample indices for ``step``: consecutive slices of per-epoch permutations."""
    per_epoch = max(1, math.ceil(n / minibatch))
    epoch, k = divmod(step, per_epoch)
    perm = np.random.default_rng([seed, epoch, 0xE]).permutation(n)
    return perm[k * minibatch:(k + 1) * minibatch]


def pretrain(config, samples=None, stats=None, log=None):
    """Run the configured pretraining; returns the final checkpoint path."""
    c = config
    out = Path(c["out.dir"])
    workers = c["data.workers"]
    if samples is None:
        d = Path(c["data.dir"])
        if not d.is_dir():
            raise DataError(f"dataset directory not found: {d}")
        samples, stats = load_dataset(d, workers)
    if not samples:
        raise DataError("dataset is empty")
    if stats is None:
        stats = compute_stats(samples)
    if c["data.normalize"]:
        samples = [normalize(s, stats) for s in samples]
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise DataError(f"cannot create output directory {out}: {exc}") from exc
    run = Run.from_config(c, len(samples), dump_dir=out)
    state = init_state(run)
    config_text = c.to_text()
    log_path = out / "metrics.tsv"
    every = c["train.checkpoint_every"]
    with open(log_path, "w") as fh:
        fh.write("step\tobjective\tloss\tlr\tm\tgrad_norm\n")
        t0 = time.perf_counter()
        for step in range(run.total_steps):
            idx = minibatch_indices(len(samples), c["train.minibatch"], c["train.seed"], step)
            batch = make_batch([samples[i] for i in idx], c["train.repeats"],
                               np.random.SeedSequence([c["train.seed"], step, 2]),
                               c["train.patch_sizes"], c["train.shape_menu"], workers)
            objective = objective_for_step(c["train.objective"], step)
            state, met = train_step(state, batch, objective, run)
            fh.write(f"{met['step']}\t{objective}\t{met['loss']:.6g}\t{met['lr']:.6g}\t"
                     f"{met['m']:.6g}\t{met['grad_norm']:.6g}\n")
            if log is not None and (step % max(c["train.log_every"], 1) == 0):
                log(met, time.perf_counter() - t0)
            if every and (step + 1) % every == 0 and step + 1 < run.total_steps:
                save_checkpoint(out / f"step{step + 1:06d}.glck", config_text,
                                checkpoint_tensors(state, stats))
    final = out / "final.glck"
    save_checkpoint(final, config_text, checkpoint_tensors(state, stats))
    return final
