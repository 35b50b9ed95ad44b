"""``galileo`` command line: gen-data, pretrain, eval, report.

Exit codes: 0 success, 2 configuration or usage error, 3 data error,
4 numerical abort (non-finite loss or gradient).
"""

import argparse
import math
import os
import sys
from pathlib import Path

import numpy as np

from galileo.errors import ConfigError, DataError, FormatError, NumericalAbort

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4
MODES = ("knn", "linear", "similarity", "macs")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise ConfigError(f"{self.prog}: {message}")


def _env_seed(default=0):
    text = os.environ.get("GALILEO_SEED")
    if text is None:
        return default
    try:
        return int(text)
    except ValueError:
        raise ConfigError(f"GALILEO_SEED must be an integer, got {text!r}") from None


def _dims(text):
    try:
        dims = tuple(int(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError("dims must look like H,W,T") from None
    if len(dims) != 3:
        raise argparse.ArgumentTypeError("dims must look like H,W,T")
    return dims


def build_parser():
    p = _Parser(prog="galileo", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="verb", required=True, parser_class=_Parser)

    g = sub.add_parser("gen-data", help="write a synthetic GLEO dataset")
    g.add_argument("--out", required=True)
    g.add_argument("--num", type=int, required=True)
    g.add_argument("--classes", type=int, default=4)
    g.add_argument("--seed", type=int, default=None)
    g.add_argument("--dims", type=_dims, default=(16, 16, 12))
    g.add_argument("--noise", type=float, default=None)
    g.add_argument("--workers", type=int, default=1)

    t = sub.add_parser("pretrain", help="run self-supervised pretraining")
    t.add_argument("--config", required=True)
    t.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE")
    t.add_argument("--data", default=None, help="dataset directory (overrides data.dir)")
    t.add_argument("--out", default=None, help="output directory (overrides out.dir)")
    t.add_argument("--workers", type=int, default=None)
    t.add_argument("--quiet", action="store_true")

    e = sub.add_parser("eval", help="evaluate a checkpoint on frozen features")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data", required=True, help="train split (or the whole set without --test)")
    e.add_argument("--test", default=None, help="test split; default: last third of --data")
    e.add_argument("--mode", choices=MODES, required=True)
    e.add_argument("--patch-size", type=int, default=4)
    e.add_argument("--k", type=int, default=20)
    e.add_argument("--out", default=None)
    e.add_argument("--workers", type=int, default=1)

    r = sub.add_parser("report", help="summarise a metrics log")
    r.add_argument("--log", required=True)
    return p


# ---------------------------------------------------------------- verbs

def cmd_gen_data(a):
    from galileo.data import compute_stats, generate_corpus, write_dataset
    from galileo.data.synthetic import NOISE

    if a.num < 0 or a.classes < 1:
        raise ConfigError("--num must be >= 0 and --classes >= 1")
    seed = a.seed if a.seed is not None else _env_seed()
    noise = NOISE if a.noise is None else a.noise
    samples = generate_corpus(a.num, a.classes, seed, a.dims, noise)
    stats = compute_stats(samples) if samples else None
    write_dataset(a.out, samples, stats, a.workers)
    print(f"wrote {len(samples)} samples to {a.out}")
    return EXIT_OK


def cmd_pretrain(a):
    from galileo.training.config import load_config
    from galileo.training.loop import pretrain

    cfg = load_config(a.config, a.overrides)
    if a.data is not None:
        cfg.set("data.dir", a.data)
    if a.out is not None:
        cfg.set("out.dir", a.out)
    if a.workers is not None:
        cfg.set("data.workers", str(a.workers))
    if "train.seed" not in cfg.explicit and "GALILEO_SEED" in os.environ:
        cfg.set("train.seed", str(_env_seed()))
    cfg.validate()

    def log(met, elapsed):
        print(f"step {met['step']:>6} {met['objective']:<6} loss {met['loss']:.4f} "
              f"lr {met['lr']:.2e} m {met['m']:.5f} |g| {met['grad_norm']:.3f} "
              f"[{elapsed:.0f}s]", flush=True)

    path = pretrain(cfg, log=None if a.quiet else log)
    print(f"checkpoint {path}")
    return EXIT_OK


def _split(samples):
    n_test = len(samples) // 3
    return samples[:len(samples) - n_test], samples[len(samples) - n_test:]


def cmd_eval(a):
    from galileo.data import load_dataset
    from galileo.evaluation import (
        checkpoint_similarity,
        embed_dataset,
        estimate_macs,
        knn_probe,
        linear_probe,
        load_encoder,
        optical_groups,
        write_curve,
        write_report,
    )

    enc = load_encoder(a.checkpoint)
    out = Path(a.out) if a.out else Path(a.checkpoint).parent
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    if a.mode == "macs":
        samples, _ = load_dataset(a.data, a.workers)
        H, W, T = samples[0].dims if samples else (64, 64, 1)
        points = []
        for P in (1, 2, 4, 8, 16):
            if H % P or W % P:
                continue
            macs = estimate_macs(enc.model, (H, W, T), P, enc.groups)
            rows.append((f"macs_P{P}", macs))
            if P <= 8 and samples and (H // P) * (W // P) * T <= 64 * 12:
                train, test = _split(samples)
                acc = knn_probe(embed_dataset(enc, train, P), embed_dataset(enc, test, P),
                                min(a.k, len(train)))
                rows.append((f"knn_P{P}", acc))
                points.append((macs, acc))
        rows.append(("macs_optical_64x64_P8", estimate_macs(enc.model, (64, 64, 1), 8,
                                                             optical_groups())))
        rows.append(("macs_optical_64x64_P16", estimate_macs(enc.model, (64, 64, 1), 16,
                                                              optical_groups())))
        write_curve(out / "macs_curve.dat", points)
    else:
        samples, _ = load_dataset(a.data, a.workers)
        if a.test:
            train, _ = samples, None
            test, _ = load_dataset(a.test, a.workers)
        else:
            train, test = _split(samples)
        if not train:
            raise DataError(f"no samples in {a.data}")
        if a.mode == "similarity":
            within, between = checkpoint_similarity(enc, test or train, a.patch_size)
            rows += [("within_similarity", within), ("between_similarity", between)]
        else:
            ftr = embed_dataset(enc, train, a.patch_size)
            fte = embed_dataset(enc, test, a.patch_size)
            if a.mode == "knn":
                rows.append((f"knn_top1_k{a.k}", knn_probe(ftr, fte, min(a.k, len(ftr)))))
            else:
                rows.append(("linear_top1", linear_probe(ftr, fte)))
    write_report(out / f"eval_{a.mode}.txt", rows)
    for k, v in rows:
        print(f"{k}\t{v:.4f}" if isinstance(v, float) else f"{k}\t{v}")
    return EXIT_OK


def summarize_log(path):
    steps, objectives, losses = [], [], []
    try:
        lines = Path(path).read_text().splitlines()
    except OSError as exc:
        raise DataError(f"cannot read metrics log {path}: {exc.strerror or exc}") from None
    for lineno, line in enumerate(lines, 1):
        if not line.strip() or line.startswith("step"):
            continue
        parts = line.split("\t")
        if len(parts) != 6:
            raise FormatError(f"{path}:{lineno}: expected 6 tab-separated fields")
        steps.append(int(parts[0]))
        objectives.append(parts[1])
        losses.append(float(parts[2]))
    losses = np.array(losses)
    summary = [("records", len(losses)),
               ("all_finite", int(bool(np.all(np.isfinite(losses)))))]
    for obj in sorted(set(objectives)):
        sel = losses[[o == obj for o in objectives]]
        tail = sel[-max(1, len(sel) // 10):]
        summary += [(f"{obj}_first", float(sel[0])), (f"{obj}_last", float(sel[-1])),
                    (f"{obj}_tail_mean", float(tail.mean()))]
    if {"global", "local"} <= set(objectives) and len(losses) >= 2:
        pairs = losses[: len(losses) // 2 * 2].reshape(-1, 2).mean(axis=1)
        tail = pairs[-max(1, len(pairs) // 10):]
        summary.append(("galileo_tail_mean", float(tail.mean())))
    return summary


def cmd_report(a):
    for k, v in summarize_log(a.log):
        print(f"{k}\t{v:.6g}" if isinstance(v, float) and math.isfinite(v) else f"{k}\t{v}")
    return EXIT_OK


COMMANDS = {"gen-data": cmd_gen_data, "pretrain": cmd_pretrain, "eval": cmd_eval,
            "report": cmd_report}


def run(argv=None):
    try:
        args = build_parser().parse_args(argv)
        return COMMANDS[args.verb](args)
    except ConfigError as exc:
        print(f"galileo: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalAbort as exc:
        print(f"galileo: numerical abort: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, FormatError, FileNotFoundError) as exc:
        print(f"galileo: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except SystemExit as exc:  # --help
        return int(exc.code or 0)


def main():
    sys.exit(run())
