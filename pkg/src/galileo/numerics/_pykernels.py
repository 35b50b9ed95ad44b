"""Pure numpy implementations of the fused kernels.

Every function here has a twin in ``galileo._ckernels`` with the same
signature. Inputs are 2D C-contiguous arrays (rows are independent);
callers in ``autodiff`` flatten leading axes before dispatching.
"""

import numpy as np

GELU_C = np.sqrt(2.0 / np.pi)
GELU_A = 0.044715


def layer_norm_fwd(x, gamma, beta, eps):
    mean = x.mean(axis=1, keepdims=True)
    xc = x - mean
    var = np.mean(xc * xc, axis=1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = xc * rstd
    return xhat * gamma + beta, mean[:, 0], rstd[:, 0]


def layer_norm_bwd(dy, x, mean, rstd, gamma):
    rstd = rstd[:, None]
    xhat = (x - mean[:, None]) * rstd
    dgamma = np.sum(dy * xhat, axis=0)
    dbeta = np.sum(dy, axis=0)
    g = dy * gamma
    dx = rstd * (g - g.mean(axis=1, keepdims=True)
                 - xhat * np.mean(g * xhat, axis=1, keepdims=True))
    return dx, dgamma, dbeta


def gelu_fwd(x):
    t = np.tanh(GELU_C * (x + GELU_A * x * x * x))
    return 0.5 * x * (1.0 + t)


def gelu_bwd(dy, x):
    x2 = x * x
    t = np.tanh(GELU_C * (x + GELU_A * x2 * x))
    dt = GELU_C * (1.0 + 3.0 * GELU_A * x2)
    return dy * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * dt)


def softmax_fwd(x, scale=1.0):
    """Row softmax of ``scale * x``."""
    z = x * x.dtype.type(scale) if scale != 1.0 else x.copy()
    z -= z.max(axis=1, keepdims=True)
    np.exp(z, out=z)
    z /= z.sum(axis=1, keepdims=True)
    return z


def softmax_bwd(dy, y, scale=1.0):
    out = y * (dy - np.sum(dy * y, axis=1, keepdims=True))
    if scale != 1.0:
        out *= out.dtype.type(scale)
    return out


def knn_vote(sims, labels, k, n_classes):
    """Majority vote among the k most similar training rows.

    Neighbour order: similarity descending, then train index ascending.
    Vote ties go to the class with the most similar neighbour, then to
    the lowest class id.
    """
    n_test = sims.shape[0]
    preds = np.empty(n_test, dtype=np.int64)
    for i in range(n_test):
        order = np.argsort(-sims[i], kind="stable")[:k]
        counts = np.zeros(n_classes, dtype=np.int64)
        best_sim = np.full(n_classes, -np.inf)
        for j in order:
            c = labels[j]
            counts[c] += 1
            if sims[i, j] > best_sim[c]:
                best_sim[c] = sims[i, j]
        best = -1
        for c in range(n_classes):
            if counts[c] == 0:
                continue
            if best < 0 or counts[c] > counts[best] or (
                counts[c] == counts[best] and best_sim[c] > best_sim[best]
            ):
                best = c
        preds[i] = best
    return preds
