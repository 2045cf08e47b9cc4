"""NumPy implementations of the hot kernels.

These are the reference semantics; the compiled backend in ``_ck.pyx`` must
match them (exactly for co_assign/viterbi_path, to float tolerance for the
split scan, whose summation order differs).
"""

from __future__ import annotations

import numpy as np

NAME = "python"

_CO_CHUNK = 2048


def co_assign(aggregate: np.ndarray, sums: np.ndarray) -> np.ndarray:
    """Index of the level-sum closest to each aggregate sample.

    Ties resolve to the smallest index.
    """
    agg = np.ascontiguousarray(aggregate, dtype=np.float64)
    s = np.ascontiguousarray(sums, dtype=np.float64)
    out = np.empty(agg.size, dtype=np.int64)
    for lo in range(0, agg.size, _CO_CHUNK):
        hi = min(lo + _CO_CHUNK, agg.size)
        out[lo:hi] = np.abs(agg[lo:hi, None] - s[None, :]).argmin(axis=1)
    return out


def viterbi_path(log_init: np.ndarray, log_trans: np.ndarray,
                 log_emit: np.ndarray) -> tuple[np.ndarray, float]:
    """Most probable state path of a log-space HMM.

    log_init: (S,), log_trans: (S, S) rows = from-state, log_emit: (T, S).
    Returns (path, best log-probability); arg ties resolve to the smallest
    state index.
    """
    log_init = np.asarray(log_init, dtype=np.float64)
    log_trans = np.asarray(log_trans, dtype=np.float64)
    log_emit = np.asarray(log_emit, dtype=np.float64)
    T, S = log_emit.shape
    delta = log_init + log_emit[0]
    psi = np.zeros((T, S), dtype=np.int64)
    for t in range(1, T):
        scores = delta[:, None] + log_trans
        best_prev = scores.argmax(axis=0)
        delta = scores[best_prev, np.arange(S)] + log_emit[t]
        psi[t] = best_prev
    last = int(delta.argmax())
    best = float(delta[last])
    path = np.empty(T, dtype=np.int64)
    path[-1] = last
    for t in range(T - 1, 0, -1):
        path[t - 1] = psi[t, path[t]]
    return path, best


def best_split(xs: np.ndarray, ys: np.ndarray, friedman: bool) -> tuple[float, float]:
    """Best binary split of one feature, given values sorted ascending.

    Candidates are midpoints between consecutive distinct values. Returns
    (gain, threshold); gain is the parent-vs-children SSE reduction, or the
    (nL*nR/n)*(muL-muR)^2 improvement when ``friedman``. Ties resolve to the
    lowest threshold. Returns (-inf, nan) when no candidate exists.
    """
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    n = xs.size
    if n < 2:
        return -np.inf, np.nan
    valid = xs[:-1] < xs[1:]
    if not valid.any():
        return -np.inf, np.nan
    csum = np.cumsum(ys)
    total = csum[-1]
    nl = np.arange(1, n, dtype=np.float64)
    nr = n - nl
    sl = csum[:-1]
    sr = total - sl
    if friedman:
        diff = sl / nl - sr / nr
        gains = (nl * nr / n) * diff * diff
    else:
        csq = np.cumsum(ys * ys)
        sse_parent = csq[-1] - total * total / n
        sse_l = csq[:-1] - sl * sl / nl
        sse_r = (csq[-1] - csq[:-1]) - sr * sr / nr
        gains = sse_parent - sse_l - sse_r
    gains = np.where(valid, gains, -np.inf)
    i = int(gains.argmax())
    return float(gains[i]), float(0.5 * (xs[i] + xs[i + 1]))
