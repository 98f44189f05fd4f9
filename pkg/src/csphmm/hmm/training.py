"""Baum-Welch re-estimation and the order-bootstrap training chain."""

import numpy as np

from ..cluster import kmeans
from ..exceptions import BadOrder, DimensionMismatch, EmptyDataset
from . import _kernels
from .model import CircularHmm, bootstrap_order, circular_mask, normalize_table

VAR_FLOOR_SCALE = 1e-4
ABS_VAR_FLOOR = 1e-10


def variance_floor(data, scale=VAR_FLOOR_SCALE):
    pooled = np.concatenate(data, axis=0)
    return np.maximum(scale * pooled.var(axis=0), ABS_VAR_FLOOR)


def _check_data(data, dim=None):
    if data is None or len(data) == 0:
        raise EmptyDataset("training needs at least one observation sequence")
    out = []
    for seq in data:
        seq = np.asarray(seq, dtype=float)
        if seq.ndim != 2 or seq.shape[0] < 1:
            raise ValueError("each sequence must be a non-empty 2-D array")
        if dim is not None and seq.shape[1] != dim:
            raise DimensionMismatch(f"model dimension is {dim}, sequence has {seq.shape[1]}")
        out.append(seq)
    if len({s.shape[1] for s in out}) != 1:
        raise DimensionMismatch("sequences have inconsistent dimensions")
    return out


def init_from_data(data, n_states, n_mix, rng=None, mask=None, var_floor_scale=VAR_FLOOR_SCALE):
    """Order-1 starting point: uniform temporal segmentation then per-state k-means."""
    data = _check_data(data)
    rng = np.random.default_rng(rng)
    if mask is None:
        mask = circular_mask(n_states)
    floor = variance_floor(data, var_floor_scale)
    dim = data[0].shape[1]
    per_state = [[] for _ in range(n_states)]
    for seq in data:
        bounds = np.linspace(0, len(seq), n_states + 1).round().astype(int)
        for s in range(n_states):
            per_state[s].append(seq[bounds[s] : bounds[s + 1]])
    pooled = np.concatenate(data, axis=0)

    weights = np.empty((n_states, n_mix))
    means = np.empty((n_states, n_mix, dim))
    variances = np.empty((n_states, n_mix, dim))
    for s in range(n_states):
        frames = np.concatenate(per_state[s], axis=0)
        if len(frames) == 0:
            frames = pooled
        state_var = np.maximum(frames.var(axis=0), floor) if len(frames) > 1 else np.maximum(pooled.var(axis=0), floor)
        k = min(n_mix, len(frames))
        centers, labels, _ = kmeans(frames, k, rng)
        for m in range(n_mix):
            if m < k and np.sum(labels == m) > 1:
                members = frames[labels == m]
                means[s, m] = centers[m]
                variances[s, m] = np.maximum(members.var(axis=0), floor)
                weights[s, m] = len(members)
            else:
                means[s, m] = centers[m % k]
                variances[s, m] = state_var
                weights[s, m] = 1.0
        weights[s] /= weights[s].sum()

    mean_len = np.mean([len(seq) for seq in data])
    stay = float(np.clip(1.0 - n_states / mean_len, 0.5, 0.95))
    trans = np.where(np.eye(n_states, dtype=bool) & mask, stay, 0.0)
    others = mask & ~np.eye(n_states, dtype=bool)
    n_other = np.maximum(others.sum(axis=1, keepdims=True), 1)
    trans = trans + np.where(others, (1.0 - stay) / n_other, 0.0)
    trans = normalize_table(trans, mask)
    pi = np.full(n_states, 0.5 / max(n_states - 1, 1))
    pi[0] = 0.5 if n_states > 1 else 1.0
    return CircularHmm(
        pi=pi,
        transitions=trans,
        weights=weights,
        means=means,
        variances=variances,
        mask=mask,
        var_floor=floor,
    )


def _e_step(hmm, data, pooled):
    """Posterior statistics for every sequence.

    ``pooled`` is ``np.concatenate(data)``; emissions are evaluated on it in
    one batch.  Returns the total log-likelihood, initial-state counts,
    expected counts per transition-table entry and the pooled
    state-component responsibilities (T_total, N, M); rows of sequences
    with zero likelihood stay zero.
    """
    ch = hmm.chain
    n, P = hmm.n_states, sum(t.size for _, t in hmm.tables())
    onehot = np.zeros((ch.n_composite, n))
    onehot[np.arange(ch.n_composite), ch.last] = 1.0
    comp = hmm.component_log_densities(pooled)
    state_ll = _logsumexp(comp, axis=2)
    with np.errstate(invalid="ignore"):
        resp = np.exp(comp - state_ll[:, :, None])
    resp[~np.isfinite(resp)] = 0.0
    total = 0.0
    pi_counts = np.zeros(n)
    param_counts = np.zeros(P)
    start = 0
    for seq in data:
        stop = start + len(seq)
        logb = state_ll[start:stop, ch.last]
        la = _kernels.forward(ch.log_init, ch.pred_idx, ch.pred_logp, logb)
        ll = _kernels.logsumexp_row(la[-1])
        total += ll
        if not np.isfinite(ll):
            resp[start:stop] = 0.0
        else:
            lb = _kernels.backward(ch.succ_idx, ch.succ_logp, logb)
            gamma = np.exp(la + lb - ll) @ onehot
            pi_counts += gamma[0]
            xi = _kernels.edge_posteriors(la, lb, logb, ch.edge_src, ch.edge_dst, ch.edge_logp, ll)
            param_counts += np.bincount(ch.edge_param, weights=xi, minlength=P)
            resp[start:stop] *= gamma[:, :, None]
        start = stop
    return total, pi_counts, param_counts, resp


def _logsumexp(a, axis):
    m = np.max(a, axis=axis, keepdims=True)
    safe = np.where(np.isfinite(m), m, 0.0)
    with np.errstate(divide="ignore"):
        s = np.log(np.sum(np.exp(a - safe), axis=axis, keepdims=True)) + safe
    return np.squeeze(s, axis=axis)


def _m_step(hmm, pooled, pi_counts, param_counts, resp, floor):
    new = hmm.copy()
    if pi_counts.sum() > 0:
        new.pi = pi_counts / pi_counts.sum()
    off = 0
    for name, table in hmm.tables():
        counts = param_counts[off : off + table.size].reshape(table.shape)
        off += table.size
        sums = counts.sum(axis=-1, keepdims=True)
        with np.errstate(invalid="ignore", divide="ignore"):
            updated = np.where(sums > 0, counts / np.where(sums > 0, sums, 1.0), table)
        setattr(new, name, updated)

    n, m = hmm.weights.shape
    flat = resp.reshape(len(pooled), n * m)
    R = flat.sum(axis=0).reshape(n, m)
    live = R > 0
    denom = np.where(live, R, 1.0)[..., None]
    mu = np.where(live[..., None], (flat.T @ pooled).reshape(n, m, -1) / denom, hmm.means)
    # two-pass centred second moment keeps small variances accurate
    Rxx = np.empty_like(mu)
    for s in range(n):
        for k in range(m):
            diff = pooled - mu[s, k]
            Rxx[s, k] = resp[:, s, k] @ (diff * diff)
    var = np.where(live[..., None], Rxx / denom, hmm.variances)
    new.means = mu
    new.variances = np.maximum(var, floor)
    state_tot = R.sum(axis=1, keepdims=True)
    new.weights = np.where(state_tot > 0, R / np.where(state_tot > 0, state_tot, 1.0), hmm.weights)
    new.var_floor = floor
    new.invalidate()
    return new


def baum_welch(init, data, max_iters=20, rel_tol=1e-4):
    """EM re-estimation of every parameter of ``init``.

    Returns ``(model, trace)`` where ``trace[i]`` is the total log-likelihood
    of ``data`` after ``i`` iterations.  Forward-backward runs on the
    composite chain; expected edge counts are folded back into the boot and
    transition tables they came from.
    """
    data = _check_data(data, init.dim)
    floor = init.var_floor if init.var_floor is not None else variance_floor(data)
    hmm = init.copy()
    hmm.var_floor = floor
    pooled = np.concatenate(data, axis=0)
    trace = []
    for it in range(max_iters + 1):
        ll, pi_c, par_c, resp = _e_step(hmm, data, pooled)
        trace.append(float(ll))
        if it == max_iters:
            break
        if it > 0 and np.isfinite(trace[-2]) and trace[-1] - trace[-2] < rel_tol * abs(trace[-2]):
            break
        hmm = _m_step(hmm, pooled, pi_c, par_c, resp, floor)
    if max_iters == 0:
        hmm = init.copy()
    return hmm, trace


def train_chain(
    data,
    order,
    n_states=9,
    n_mix=4,
    max_iters=20,
    rel_tol=1e-4,
    seed=None,
    mask=None,
    var_floor_scale=VAR_FLOOR_SCALE,
):
    """Train orders 1..order in sequence, each bootstrapped from the previous one.

    Returns a list of ``(model, trace)`` pairs, one per order.
    """
    if order not in (1, 2, 3):
        raise BadOrder(f"order must be 1, 2 or 3, got {order}")
    data = _check_data(data)
    model = init_from_data(data, n_states, n_mix, rng=seed, mask=mask, var_floor_scale=var_floor_scale)
    out = []
    for r in range(1, order + 1):
        if r > 1:
            model = bootstrap_order(model)
        model, trace = baum_welch(model, data, max_iters=max_iters, rel_tol=rel_tol)
        out.append((model, trace))
    return out
