# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled row kernels; mirrors galileo.numerics._pykernels."""

import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, tanh, exp, tanhf, expf
from libc.float cimport DBL_MAX

cnp.import_array()

ctypedef fused real:
    float
    double

cdef double GELU_C = 0.7978845608028654
cdef double GELU_A = 0.044715


def layer_norm_fwd(real[:, ::1] x, real[::1] gamma, real[::1] beta, double eps):
    cdef Py_ssize_t n = x.shape[0], d = x.shape[1], i, j
    dtype = np.float32 if real is float else np.float64
    out_arr = np.empty((n, d), dtype=dtype)
    mean_arr = np.empty(n, dtype=dtype)
    rstd_arr = np.empty(n, dtype=dtype)
    cdef real[:, ::1] out = out_arr
    cdef real[::1] mean_v = mean_arr
    cdef real[::1] rstd_v = rstd_arr
    cdef double m, v, r, c
    with nogil:
        for i in range(n):
            m = 0.0
            for j in range(d):
                m += x[i, j]
            m /= d
            v = 0.0
            for j in range(d):
                c = x[i, j] - m
                v += c * c
            v /= d
            r = 1.0 / sqrt(v + eps)
            for j in range(d):
                out[i, j] = <real>((x[i, j] - m) * r * gamma[j] + beta[j])
            mean_v[i] = <real>m
            rstd_v[i] = <real>r
    return out_arr, mean_arr, rstd_arr


def layer_norm_bwd(real[:, ::1] dy, real[:, ::1] x, real[::1] mean,
                   real[::1] rstd, real[::1] gamma):
    cdef Py_ssize_t n = x.shape[0], d = x.shape[1], i, j
    dtype = np.float32 if real is float else np.float64
    dx_arr = np.empty((n, d), dtype=dtype)
    dg_acc = np.zeros(d, dtype=np.float64)
    db_acc = np.zeros(d, dtype=np.float64)
    cdef real[:, ::1] dx = dx_arr
    cdef double[::1] dg = dg_acc
    cdef double[::1] db = db_acc
    cdef double m, r, xh, g, s1, s2
    with nogil:
        for i in range(n):
            m = mean[i]
            r = rstd[i]
            s1 = 0.0
            s2 = 0.0
            for j in range(d):
                xh = (x[i, j] - m) * r
                g = dy[i, j] * gamma[j]
                s1 += g
                s2 += g * xh
                dg[j] += dy[i, j] * xh
                db[j] += dy[i, j]
            s1 /= d
            s2 /= d
            for j in range(d):
                xh = (x[i, j] - m) * r
                g = dy[i, j] * gamma[j]
                dx[i, j] = <real>(r * (g - s1 - xh * s2))
    return dx_arr, dg_acc.astype(dtype), db_acc.astype(dtype)


def gelu_fwd(real[:, ::1] x):
    cdef Py_ssize_t n = x.shape[0], d = x.shape[1], i, j
    dtype = np.float32 if real is float else np.float64
    out_arr = np.empty((n, d), dtype=dtype)
    cdef real[:, ::1] out = out_arr
    cdef double v, t
    cdef float vf, tf
    with nogil:
        if real is float:
            for i in range(n):
                for j in range(d):
                    vf = x[i, j]
                    tf = tanhf(<float>GELU_C * (vf + <float>GELU_A * vf * vf * vf))
                    out[i, j] = 0.5 * vf * (1.0 + tf)
        else:
            for i in range(n):
                for j in range(d):
                    v = x[i, j]
                    t = tanh(GELU_C * (v + GELU_A * v * v * v))
                    out[i, j] = 0.5 * v * (1.0 + t)
    return out_arr


def gelu_bwd(real[:, ::1] dy, real[:, ::1] x):
    cdef Py_ssize_t n = x.shape[0], d = x.shape[1], i, j
    dtype = np.float32 if real is float else np.float64
    out_arr = np.empty((n, d), dtype=dtype)
    cdef real[:, ::1] out = out_arr
    cdef double v, v2, t, dt
    cdef float vf, v2f, tf, dtf
    with nogil:
        if real is float:
            for i in range(n):
                for j in range(d):
                    vf = x[i, j]
                    v2f = vf * vf
                    tf = tanhf(<float>GELU_C * (vf + <float>GELU_A * v2f * vf))
                    dtf = <float>GELU_C * (1.0 + 3.0 * <float>GELU_A * v2f)
                    out[i, j] = dy[i, j] * (0.5 * (1.0 + tf) + 0.5 * vf * (1.0 - tf * tf) * dtf)
        else:
            for i in range(n):
                for j in range(d):
                    v = x[i, j]
                    v2 = v * v
                    t = tanh(GELU_C * (v + GELU_A * v2 * v))
                    dt = GELU_C * (1.0 + 3.0 * GELU_A * v2)
                    out[i, j] = dy[i, j] * (0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * dt)
    return out_arr


def softmax_fwd(real[:, ::1] x, double scale=1.0):
    """Row softmax of ``scale * x``."""
    cdef Py_ssize_t n = x.shape[0], d = x.shape[1], i, j
    dtype = np.float32 if real is float else np.float64
    out_arr = np.empty((n, d), dtype=dtype)
    cdef real[:, ::1] out = out_arr
    cdef real mx, s, sc = <real>scale
    with nogil:
        for i in range(n):
            mx = x[i, 0]
            for j in range(1, d):
                mx = x[i, j] if x[i, j] > mx else mx
            mx = mx * sc
            s = 0
            if real is float:
                for j in range(d):
                    out[i, j] = expf(x[i, j] * sc - mx)
            else:
                for j in range(d):
                    out[i, j] = exp(x[i, j] * sc - mx)
            for j in range(d):
                s = s + out[i, j]
            s = 1 / s
            for j in range(d):
                out[i, j] = out[i, j] * s
    return out_arr


def softmax_bwd(real[:, ::1] dy, real[:, ::1] y, double scale=1.0):
    """Gradient through ``softmax(scale * x)`` given its output ``y``."""
    cdef Py_ssize_t n = y.shape[0], d = y.shape[1], i, j
    dtype = np.float32 if real is float else np.float64
    out_arr = np.empty((n, d), dtype=dtype)
    cdef real[:, ::1] out = out_arr
    cdef real s, sc = <real>scale
    with nogil:
        for i in range(n):
            s = 0
            for j in range(d):
                s = s + dy[i, j] * y[i, j]
            for j in range(d):
                out[i, j] = sc * y[i, j] * (dy[i, j] - s)
    return out_arr


def knn_vote(double[:, ::1] sims, cnp.int64_t[::1] labels, Py_ssize_t k,
             Py_ssize_t n_classes):
    cdef Py_ssize_t n_test = sims.shape[0], n_train = sims.shape[1]
    cdef Py_ssize_t i, j, p, q, filled, c, best
    preds_arr = np.empty(n_test, dtype=np.int64)
    cdef cnp.int64_t[::1] preds = preds_arr
    top_idx_arr = np.empty(k, dtype=np.int64)
    top_sim_arr = np.empty(k, dtype=np.float64)
    counts_arr = np.empty(n_classes, dtype=np.int64)
    best_arr = np.empty(n_classes, dtype=np.float64)
    cdef cnp.int64_t[::1] top_idx = top_idx_arr
    cdef double[::1] top_sim = top_sim_arr
    cdef cnp.int64_t[::1] counts = counts_arr
    cdef double[::1] best_sim = best_arr
    cdef double s
    with nogil:
        for i in range(n_test):
            filled = 0
            for j in range(n_train):
                s = sims[i, j]
                # strict '>' keeps the earlier train index ahead on equal similarity
                if filled == k and not (s > top_sim[k - 1]):
                    continue
                p = filled if filled < k else k - 1
                while p > 0 and s > top_sim[p - 1]:
                    p -= 1
                q = filled if filled < k else k - 1
                while q > p:
                    top_sim[q] = top_sim[q - 1]
                    top_idx[q] = top_idx[q - 1]
                    q -= 1
                top_sim[p] = s
                top_idx[p] = j
                if filled < k:
                    filled += 1
            for c in range(n_classes):
                counts[c] = 0
                best_sim[c] = -DBL_MAX
            for p in range(filled):
                c = labels[top_idx[p]]
                counts[c] += 1
                if top_sim[p] > best_sim[c]:
                    best_sim[c] = top_sim[p]
            best = -1
            for c in range(n_classes):
                if counts[c] == 0:
                    continue
                if best < 0 or counts[c] > counts[best] or (
                        counts[c] == counts[best] and best_sim[c] > best_sim[best]):
                    best = c
            preds[i] = best
    return preds_arr
