import numpy as np
import pytest

from galileo.numerics import autodiff as ad

H_FD = 1e-5


def fd_check(fn, arrays, rng, coords=6, floor=1e-6):
    """Max relative error between analytic and central-difference gradients.

    ``fn`` maps a dict of Tensors to a scalar Tensor. ``coords`` entries of
    every array are probed at random positions.
    """
    leaves = {k: ad.Tensor(np.array(v, dtype=np.float64), requires_grad=True)
              for k, v in arrays.items()}
    with ad.Graph() as g:
        loss = fn(leaves)
    grads = ad.backward(g, loss)
    worst = 0.0
    for name, leaf in leaves.items():
        analytic = grads.get(leaf, np.zeros_like(leaf.data))
        flat = leaf.data.reshape(-1)
        picks = rng.choice(flat.size, size=min(coords, flat.size), replace=False)
        for i in picks:
            old = flat[i]
            flat[i] = old + H_FD
            up = float(fn(leaves).data)
            flat[i] = old - H_FD
            down = float(fn(leaves).data)
            flat[i] = old
            num = (up - down) / (2 * H_FD)
            a = float(analytic.reshape(-1)[i])
            err = abs(a - num) / max(abs(a), abs(num), floor)
            worst = max(worst, err)
    return worst


@pytest.fixture(scope="session")
def small_corpus():
    from galileo.data import generate_corpus
    return generate_corpus(24, 4, seed=3, dims=(8, 8, 4))


ACCEPTANCE = []


def acceptance_line(number, name, ok, detail, seconds):
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {number:>2} {name}: {detail} ({seconds:.1f}s)"
    ACCEPTANCE.append((number, line))
    return line


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for _, line in sorted(ACCEPTANCE):
        terminalreporter.write_line(line)
