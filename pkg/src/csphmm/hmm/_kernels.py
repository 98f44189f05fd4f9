"""Log-domain dynamic programming kernels over a sparse first-order chain.

The chain is given in padded adjacency form: ``pred_idx[c, k]`` is the k-th
predecessor of composite state ``c`` (``-1`` pads), ``pred_logp[c, k]`` the log
transition probability.  ``succ_idx``/``succ_logp`` mirror this for outgoing
edges.  Zero probabilities are ``-inf`` and propagate as such.
"""

import numpy as np
from numba import njit

NEG_INF = -np.inf


@njit(cache=True, nogil=True)
def _lse2(m, s):
    # m: running max, s: sum of exp(v - m)
    if m == NEG_INF:
        return NEG_INF
    return m + np.log(s)


@njit(cache=True, nogil=True)
def forward(log_init, pred_idx, pred_logp, logb):
    T, C = logb.shape
    K = pred_idx.shape[1]
    la = np.empty((T, C))
    for c in range(C):
        la[0, c] = log_init[c] + logb[0, c]
    for t in range(1, T):
        for c in range(C):
            m = NEG_INF
            for k in range(K):
                p = pred_idx[c, k]
                if p < 0:
                    break
                v = la[t - 1, p] + pred_logp[c, k]
                if v > m:
                    m = v
            if m == NEG_INF:
                la[t, c] = NEG_INF
                continue
            s = 0.0
            for k in range(K):
                p = pred_idx[c, k]
                if p < 0:
                    break
                s += np.exp(la[t - 1, p] + pred_logp[c, k] - m)
            la[t, c] = m + np.log(s) + logb[t, c]
    return la


@njit(cache=True, nogil=True)
def backward(succ_idx, succ_logp, logb):
    T, C = logb.shape
    K = succ_idx.shape[1]
    lb = np.empty((T, C))
    for c in range(C):
        lb[T - 1, c] = 0.0
    for t in range(T - 2, -1, -1):
        for c in range(C):
            m = NEG_INF
            for k in range(K):
                q = succ_idx[c, k]
                if q < 0:
                    break
                v = succ_logp[c, k] + logb[t + 1, q] + lb[t + 1, q]
                if v > m:
                    m = v
            if m == NEG_INF:
                lb[t, c] = NEG_INF
                continue
            s = 0.0
            for k in range(K):
                q = succ_idx[c, k]
                if q < 0:
                    break
                s += np.exp(succ_logp[c, k] + logb[t + 1, q] + lb[t + 1, q] - m)
            lb[t, c] = m + np.log(s)
    return lb


@njit(cache=True, nogil=True)
def logsumexp_row(x):
    m = NEG_INF
    for v in x:
        if v > m:
            m = v
    if m == NEG_INF:
        return NEG_INF
    s = 0.0
    for v in x:
        s += np.exp(v - m)
    return m + np.log(s)


@njit(cache=True, nogil=True)
def edge_posteriors(la, lb, logb, edge_src, edge_dst, edge_logp, loglik):
    """Expected transition counts per edge, summed over time."""
    T = la.shape[0]
    E = edge_src.shape[0]
    xi = np.zeros(E)
    for t in range(T - 1):
        for e in range(E):
            v = la[t, edge_src[e]] + edge_logp[e] + logb[t + 1, edge_dst[e]] + lb[t + 1, edge_dst[e]]
            if v != NEG_INF:
                xi[e] += np.exp(v - loglik)
    return xi


@njit(cache=True, nogil=True)
def viterbi(log_init, pred_idx, pred_logp, logb):
    T, C = logb.shape
    K = pred_idx.shape[1]
    delta = np.empty((T, C))
    psi = np.full((T, C), -1, dtype=np.int64)
    for c in range(C):
        delta[0, c] = log_init[c] + logb[0, c]
    for t in range(1, T):
        for c in range(C):
            best = NEG_INF
            arg = -1
            # pred_idx rows are sorted ascending; strict ">" keeps the smallest index on ties
            for k in range(K):
                p = pred_idx[c, k]
                if p < 0:
                    break
                v = delta[t - 1, p] + pred_logp[c, k]
                if v > best:
                    best = v
                    arg = p
            psi[t, c] = arg
            delta[t, c] = best + logb[t, c] if arg >= 0 else NEG_INF
    best = NEG_INF
    last = -1
    for c in range(C):
        if delta[T - 1, c] > best:
            best = delta[T - 1, c]
            last = c
    path = np.full(T, -1, dtype=np.int64)
    if last < 0:
        return path, NEG_INF
    path[T - 1] = last
    for t in range(T - 1, 0, -1):
        path[t - 1] = psi[t, path[t]]
    return path, best
