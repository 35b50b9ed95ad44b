"""Compiled vs pure-numpy kernels, one kernel at a time and inside a train step.

    python benchmarks/bench_kernels.py [--repeat 20] [--steps 5]
"""

import argparse
import timeit

import numpy as np

from galileo.numerics import kernels


def kernel_cases(rng):
    x = rng.normal(size=(4096, 128)).astype(np.float32)
    g = rng.normal(size=128).astype(np.float32)
    b = rng.normal(size=128).astype(np.float32)
    dy = rng.normal(size=x.shape).astype(np.float32)
    logits = rng.normal(size=(1024, 1024)).astype(np.float32)
    sims = rng.normal(size=(500, 1000))
    labels = rng.integers(0, 4, 1000)

    def ln():
        y, mu, rstd = kernels.layer_norm_fwd(x, g, b, 1e-6)
        kernels.layer_norm_bwd(dy, x, mu, rstd, g)

    def gelu():
        kernels.gelu_bwd(dy, x)
        kernels.gelu_fwd(x)

    def softmax():
        y = kernels.softmax_fwd(logits, 0.125)
        kernels.softmax_bwd(logits, y, 0.125)

    def knn():
        kernels.knn_vote(sims, labels, 20, 4)

    return {"layer_norm fwd+bwd [4096x128]": ln, "gelu fwd+bwd [4096x128]": gelu,
            "softmax fwd+bwd [1024x1024]": softmax, "knn_vote [500x1000, k=20]": knn}


def train_step_case(steps):
    from galileo.data import compute_stats, generate_corpus, normalize
    from galileo.training.config import Config
    from galileo.training.loop import Run, init_state, minibatch_indices, objective_for_step, train_step
    from galileo.training import make_batch

    cfg = Config()
    for k, v in {"model.size": "nano-mini", "train.minibatch": "8", "train.repeats": "2",
                 "train.patch_sizes": "4, 8", "train.shape_menu": "2x4, 3x3"}.items():
        cfg.set(k, v)
    cfg.validate()
    samples = generate_corpus(32, 4, seed=0)
    stats = compute_stats(samples)
    samples = [normalize(s, stats) for s in samples]
    batches = []
    for step in range(steps):
        idx = minibatch_indices(len(samples), 8, 0, step)
        batches.append(make_batch([samples[i] for i in idx], 2, np.random.SeedSequence([0, step, 2]),
                                  cfg["train.patch_sizes"], cfg["train.shape_menu"]))

    run_cfg = Run.from_config(cfg, len(samples))

    def run():
        state = init_state(run_cfg)
        for step, batch in enumerate(batches):
            state, _ = train_step(state, batch, objective_for_step("combined", step), run_cfg)

    return run


def bench(fn, repeat):
    fn()  # warm up
    return min(timeit.repeat(fn, number=1, repeat=repeat))


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=20)
    ap.add_argument("--steps", type=int, default=5)
    a = ap.parse_args()
    backends = kernels.available_backends()
    if "compiled" not in backends:
        print("compiled kernels are not built; only the python backend is timed")
    rng = np.random.default_rng(0)
    cases = kernel_cases(rng)
    cases[f"train step x{a.steps} (nano-mini)"] = train_step_case(a.steps)
    width = max(map(len, cases))
    print(f"{'case':<{width}}  " + "  ".join(f"{b:>10}" for b in backends) + "  speedup")
    for name, fn in cases.items():
        times = {}
        for b in backends:
            with kernels.using_backend(b):
                times[b] = bench(fn, a.repeat if "train" not in name else 3)
        cols = "  ".join(f"{times[b] * 1e3:>8.2f}ms" for b in backends)
        speed = f"{times['python'] / times['compiled']:.2f}x" if "compiled" in times else "-"
        print(f"{name:<{width}}  {cols}  {speed:>7}")


if __name__ == "__main__":
    main()
