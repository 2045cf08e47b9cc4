# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled twins of the NumPy kernels in ``_pyk``.

Semantics must match ``_pyk`` exactly; see the parity tests.
"""

import numpy as np

cimport numpy as cnp

cnp.import_array()

NAME = "compiled"


def co_assign(aggregate, sums):
    cdef const cnp.float64_t[::1] agg = np.ascontiguousarray(aggregate, dtype=np.float64)
    cdef const cnp.float64_t[::1] s = np.ascontiguousarray(sums, dtype=np.float64)
    cdef Py_ssize_t T = agg.shape[0]
    cdef Py_ssize_t S = s.shape[0]
    out_arr = np.empty(T, dtype=np.int64)
    cdef cnp.int64_t[::1] out = out_arr
    cdef Py_ssize_t t, j, best_j
    cdef double a, d, best_d
    for t in range(T):
        a = agg[t]
        best_j = 0
        best_d = a - s[0]
        if best_d < 0:
            best_d = -best_d
        for j in range(1, S):
            d = a - s[j]
            if d < 0:
                d = -d
            if d < best_d:
                best_d = d
                best_j = j
        out[t] = best_j
    return out_arr


def viterbi_path(log_init, log_trans, log_emit):
    cdef const cnp.float64_t[::1] init = np.ascontiguousarray(log_init, dtype=np.float64)
    cdef const cnp.float64_t[:, ::1] trans = np.ascontiguousarray(log_trans, dtype=np.float64)
    cdef const cnp.float64_t[:, ::1] emit = np.ascontiguousarray(log_emit, dtype=np.float64)
    cdef Py_ssize_t T = emit.shape[0]
    cdef Py_ssize_t S = emit.shape[1]
    delta_arr = np.empty(S, dtype=np.float64)
    next_arr = np.empty(S, dtype=np.float64)
    psi_arr = np.zeros((T, S), dtype=np.int64)
    path_arr = np.empty(T, dtype=np.int64)
    cdef cnp.float64_t[::1] delta = delta_arr
    cdef cnp.float64_t[::1] nxt = next_arr
    cdef cnp.int64_t[:, ::1] psi = psi_arr
    cdef cnp.int64_t[::1] path = path_arr
    cdef Py_ssize_t t, i, j, best_i
    cdef double score, best
    for j in range(S):
        delta[j] = init[j] + emit[0, j]
    for t in range(1, T):
        for j in range(S):
            best_i = 0
            best = delta[0] + trans[0, j]
            for i in range(1, S):
                score = delta[i] + trans[i, j]
                if score > best:
                    best = score
                    best_i = i
            nxt[j] = best + emit[t, j]
            psi[t, j] = best_i
        delta[:] = nxt
    best_i = 0
    best = delta[0]
    for j in range(1, S):
        if delta[j] > best:
            best = delta[j]
            best_i = j
    path[T - 1] = best_i
    for t in range(T - 1, 0, -1):
        path[t - 1] = psi[t, path[t]]
    return path_arr, best


def best_split(xs, ys, friedman):
    cdef const cnp.float64_t[::1] x = np.ascontiguousarray(xs, dtype=np.float64)
    cdef const cnp.float64_t[::1] y = np.ascontiguousarray(ys, dtype=np.float64)
    cdef Py_ssize_t n = x.shape[0]
    cdef bint fried = friedman
    if n < 2:
        return -np.inf, np.nan
    cdef double total = 0.0, total_sq = 0.0
    cdef Py_ssize_t i
    for i in range(n):
        total += y[i]
        total_sq += y[i] * y[i]
    cdef double sse_parent = total_sq - total * total / n
    cdef double sl = 0.0, sq_l = 0.0
    cdef double nl, nr, sr, diff, gain, sse_l, sse_r
    cdef double best_gain = -np.inf, best_thr = np.nan
    cdef bint found = False
    for i in range(n - 1):
        sl += y[i]
        sq_l += y[i] * y[i]
        if x[i] >= x[i + 1]:
            continue
        nl = i + 1
        nr = n - nl
        sr = total - sl
        if fried:
            diff = sl / nl - sr / nr
            gain = nl * nr / n
            gain = gain * diff
            gain = gain * diff
        else:
            sse_l = sq_l - sl * sl / nl
            sse_r = (total_sq - sq_l) - sr * sr / nr
            gain = sse_parent - sse_l - sse_r
        if not found or gain > best_gain:
            found = True
            best_gain = gain
            best_thr = 0.5 * (x[i] + x[i + 1])
    if not found:
        return -np.inf, np.nan
    return best_gain, best_thr
