"""Circular hidden Markov models of order 1-3 with diagonal GMM emissions."""

from dataclasses import dataclass, field, replace
from itertools import product

import numpy as np

from ..exceptions import BadOrder, DimensionMismatch, NoValidPath
from . import _kernels

NORM_ATOL = 1e-12
MAX_ORDER = 3
LOG_2PI = np.log(2.0 * np.pi)
PAD = -1


def circular_mask(n_states):
    """Allowed-transition mask of a ring: each state may stay or advance by one."""
    if n_states < 1:
        raise ValueError("n_states must be >= 1")
    mask = np.zeros((n_states, n_states), dtype=bool)
    for i in range(n_states):
        mask[i, i] = True
        mask[i, (i + 1) % n_states] = True
    return mask


@dataclass(frozen=True)
class Topology:
    n_states: int = 9
    order: int = 1
    mask: np.ndarray = None

    def __post_init__(self):
        if self.n_states < 1:
            raise ValueError("n_states must be >= 1")
        if self.order not in (1, 2, 3):
            raise BadOrder(f"order must be 1, 2 or 3, got {self.order}")
        if self.mask is None:
            object.__setattr__(self, "mask", circular_mask(self.n_states))
        mask = np.asarray(self.mask, dtype=bool)
        if mask.shape != (self.n_states, self.n_states):
            raise ValueError("mask must be n_states x n_states")
        if not mask.any(axis=1).all():
            raise ValueError("every state needs at least one allowed successor")
        object.__setattr__(self, "mask", mask)

    def successors(self, i):
        return np.flatnonzero(self.mask[i])


def _masked_rows(table, mask):
    """Zero out entries whose next state is not allowed after the context's last state."""
    return table * mask.reshape((1,) * (table.ndim - 2) + mask.shape)


@dataclass
class CircularHmm:
    """Parameters of an order-r circular HMM.

    ``transitions`` has ``order + 1`` axes: ``transitions[i, j, k, w]`` is the
    probability of moving to ``w`` given the previous three states ``i, j, k``
    (fewer axes for lower orders).  For order >= 2 the first transition uses
    ``boot1`` and, for order 3, the second uses ``boot2``.
    """

    pi: np.ndarray
    transitions: np.ndarray
    weights: np.ndarray
    means: np.ndarray
    variances: np.ndarray
    mask: np.ndarray = None
    boot1: np.ndarray = None
    boot2: np.ndarray = None
    var_floor: np.ndarray = None
    _chain: object = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        self.pi = np.asarray(self.pi, dtype=float)
        self.transitions = np.asarray(self.transitions, dtype=float)
        self.weights = np.asarray(self.weights, dtype=float)
        self.means = np.asarray(self.means, dtype=float)
        self.variances = np.asarray(self.variances, dtype=float)
        n = self.pi.shape[0]
        if self.mask is None:
            self.mask = circular_mask(n)
        self.mask = np.asarray(self.mask, dtype=bool)
        if self.boot1 is not None:
            self.boot1 = np.asarray(self.boot1, dtype=float)
        if self.boot2 is not None:
            self.boot2 = np.asarray(self.boot2, dtype=float)
        if self.var_floor is not None:
            self.var_floor = np.asarray(self.var_floor, dtype=float)
        self._check_shapes()

    # -- structure -----------------------------------------------------------

    @property
    def n_states(self):
        return self.pi.shape[0]

    @property
    def order(self):
        return self.transitions.ndim - 1

    @property
    def n_mix(self):
        return self.weights.shape[1]

    @property
    def dim(self):
        return self.means.shape[2]

    @property
    def topology(self):
        return Topology(self.n_states, self.order, self.mask)

    def _check_shapes(self):
        n, r = self.n_states, self.order
        if r not in (1, 2, 3):
            raise BadOrder(f"transition tensor implies order {r}")
        if self.transitions.shape != (n,) * (r + 1):
            raise ValueError(f"transitions must have shape {(n,) * (r + 1)}")
        if self.mask.shape != (n, n):
            raise ValueError("mask shape mismatch")
        if r >= 2 and (self.boot1 is None or self.boot1.shape != (n, n)):
            raise ValueError("order >= 2 requires boot1 of shape (N, N)")
        if r == 3 and (self.boot2 is None or self.boot2.shape != (n, n, n)):
            raise ValueError("order 3 requires boot2 of shape (N, N, N)")
        if r < 2:
            self.boot1 = None
        if r < 3:
            self.boot2 = None
        m = self.weights.shape[1] if self.weights.ndim == 2 else -1
        if self.weights.shape != (n, m) or self.means.ndim != 3 or self.means.shape[:2] != (n, m):
            raise ValueError("emission arrays must be (N, M) weights and (N, M, D) means")
        if self.variances.shape != self.means.shape:
            raise ValueError("variances must match means")

    def tables(self):
        """Conditional tables in chain order: (name, array) pairs."""
        out = []
        if self.order >= 2:
            out.append(("boot1", self.boot1))
        if self.order == 3:
            out.append(("boot2", self.boot2))
        out.append(("transitions", self.transitions))
        return out

    def copy(self):
        return replace(
            self,
            pi=self.pi.copy(),
            transitions=self.transitions.copy(),
            weights=self.weights.copy(),
            means=self.means.copy(),
            variances=self.variances.copy(),
            mask=self.mask.copy(),
            boot1=None if self.boot1 is None else self.boot1.copy(),
            boot2=None if self.boot2 is None else self.boot2.copy(),
            var_floor=None if self.var_floor is None else self.var_floor.copy(),
            _chain=None,
        )

    def check_invariants(self, atol=NORM_ATOL):
        """Raise ``AssertionError`` if any normalization or mask invariant is broken."""
        assert abs(self.pi.sum() - 1.0) <= atol, "pi does not sum to 1"
        assert (self.pi >= 0).all()
        for name, table in self.tables():
            assert (table >= 0).all(), f"{name} has negative entries"
            forbidden = ~np.broadcast_to(self.mask, table.shape[-2:])
            forbidden = np.broadcast_to(forbidden, table.shape)
            assert (table[forbidden] == 0.0).all(), f"{name} has mass outside the mask"
            sums = table.sum(axis=-1)
            assert np.abs(sums - 1.0).max() <= atol, f"{name} rows do not sum to 1"
        assert np.abs(self.weights.sum(axis=1) - 1.0).max() <= atol, "mixture weights do not sum to 1"
        if self.var_floor is not None:
            assert (self.variances >= self.var_floor).all(), "variance below floor"
        assert (self.variances > 0).all()
        return True

    # -- emissions -----------------------------------------------------------

    def component_log_densities(self, obs):
        """log w_m + log N(o_t; mu_sm, diag var_sm) with shape (T, N, M)."""
        obs = np.asarray(obs, dtype=float)
        if obs.ndim != 2 or obs.shape[1] != self.dim:
            raise DimensionMismatch(f"expected observations of dimension {self.dim}, got shape {obs.shape}")
        n, m, d = self.means.shape
        dens = diag_gaussian_log_density(obs, self.means.reshape(n * m, d), self.variances.reshape(n * m, d))
        with np.errstate(divide="ignore"):
            log_w = np.log(self.weights)
        out = log_w[None] + dens.reshape(len(obs), n, m)
        out[np.isnan(out)] = -np.inf
        return out

    def state_log_likelihood(self, obs):
        """Per-state emission log density, shape (T, N)."""
        comp = self.component_log_densities(obs)
        return _logsumexp(comp, axis=2)

    # -- composite chain -----------------------------------------------------

    @property
    def chain(self):
        if self._chain is None:
            self._chain = order_reduce(self)
        return self._chain

    def invalidate(self):
        self._chain = None


def diag_gaussian_log_density(obs, means, variances):
    """log N(o_t; mu_k, diag var_k) for every frame and component, shape (T, K)."""
    prec = 1.0 / variances
    # expanded quadratic form: sum_d (o - mu)^2 / var as three matrix products
    with np.errstate(over="ignore", invalid="ignore"):
        quad = (obs * obs) @ prec.T - 2.0 * obs @ (means * prec).T + np.sum(means * means * prec, axis=1)
    quad = np.maximum(quad, 0.0)
    log_norm = -0.5 * (means.shape[1] * LOG_2PI + np.sum(np.log(variances), axis=1))
    return log_norm[None] - 0.5 * quad


def _logsumexp(a, axis):
    m = np.max(a, axis=axis, keepdims=True)
    safe = np.where(np.isfinite(m), m, 0.0)
    with np.errstate(divide="ignore"):
        s = np.log(np.sum(np.exp(a - safe), axis=axis, keepdims=True)) + safe
    return np.squeeze(s, axis=axis)


@dataclass
class CompositeChain:
    """First-order chain over padded state histories of an order-r model.

    A composite state is the tuple of the last ``order`` states; the first
    ``order - 1`` time steps use left-padded tuples (``-1`` marks "before
    the start"), which lets the boot tables act as ordinary transitions.
    """

    states: list
    last: np.ndarray
    log_init: np.ndarray
    edge_src: np.ndarray
    edge_dst: np.ndarray
    edge_param: np.ndarray
    edge_logp: np.ndarray
    pred_idx: np.ndarray
    pred_logp: np.ndarray
    succ_idx: np.ndarray
    succ_logp: np.ndarray
    table_offsets: dict

    @property
    def n_composite(self):
        return len(self.states)

    @property
    def full_states(self):
        """Composite states carrying a complete (unpadded) history."""
        return [s for s in self.states if PAD not in s]

    def emission_index(self, state_loglik):
        return state_loglik[:, self.last]

    def path_log_prob(self, composite_path):
        """Log probability of a composite path under the chain (no emissions)."""
        lp = self.log_init[composite_path[0]]
        for a, b in zip(composite_path[:-1], composite_path[1:]):
            hit = np.flatnonzero((self.edge_src == a) & (self.edge_dst == b))
            if hit.size == 0:
                return -np.inf
            lp += self.edge_logp[hit[0]]
        return lp

    def composite_path(self, state_path, order):
        """Map a state sequence to its composite-state index sequence."""
        index = {s: i for i, s in enumerate(self.states)}
        out = []
        for t in range(len(state_path)):
            hist = tuple(state_path[max(0, t - order + 1) : t + 1])
            hist = (PAD,) * (order - len(hist)) + hist
            out.append(index[hist])
        return np.array(out)


def _chains(mask, length):
    n = mask.shape[0]
    if length == 1:
        return [(i,) for i in range(n)]
    out = []
    for prefix in _chains(mask, length - 1):
        for j in np.flatnonzero(mask[prefix[-1]]):
            out.append(prefix + (int(j),))
    return out


def order_reduce(hmm):
    """Build the equivalent first-order chain over state histories.

    Path probabilities of the composite chain equal those of the order-r
    chain for every state sequence; a composite state emits with the density
    of its most recent state.
    """
    r, n, mask = hmm.order, hmm.n_states, hmm.mask
    states = []
    for k in range(1, r + 1):
        states.extend(((PAD,) * (r - k)) + c for c in _chains(mask, k))
    states.sort()
    index = {s: i for i, s in enumerate(states)}

    offsets = {}
    off = 0
    for name, table in hmm.tables():
        offsets[name] = (off, table.shape)
        off += table.size
    with np.errstate(divide="ignore"):
        flat_logp = np.concatenate([np.log(t.ravel()) for _, t in hmm.tables()])
        log_pi = np.log(hmm.pi)

    log_init = np.full(len(states), -np.inf)
    src, dst, par = [], [], []
    for s in states:
        hist = tuple(q for q in s if q != PAD)
        if len(hist) == 1:
            log_init[index[s]] = log_pi[hist[0]]
        if len(hist) < r:
            name = "boot1" if len(hist) == 1 else "boot2"
        else:
            name = "transitions"
        base, shape = offsets[name]
        for j in np.flatnonzero(mask[hist[-1]]):
            j = int(j)
            nxt = hist + (j,)
            target = ((PAD,) * (r - len(nxt)) + nxt) if len(nxt) <= r else nxt[1:]
            src.append(index[s])
            dst.append(index[target])
            par.append(base + int(np.ravel_multi_index(hist + (j,), shape)))
    edge_src = np.array(src, dtype=np.int64)
    edge_dst = np.array(dst, dtype=np.int64)
    edge_param = np.array(par, dtype=np.int64)
    edge_logp = flat_logp[edge_param]

    C = len(states)
    pred_idx, pred_logp = _pad_adjacency(C, edge_dst, edge_src, edge_logp)
    succ_idx, succ_logp = _pad_adjacency(C, edge_src, edge_dst, edge_logp)
    last = np.array([s[-1] for s in states], dtype=np.int64)
    return CompositeChain(
        states=states,
        last=last,
        log_init=log_init,
        edge_src=edge_src,
        edge_dst=edge_dst,
        edge_param=edge_param,
        edge_logp=edge_logp,
        pred_idx=pred_idx,
        pred_logp=pred_logp,
        succ_idx=succ_idx,
        succ_logp=succ_logp,
        table_offsets=offsets,
    )


def _pad_adjacency(C, key, other, logp):
    order = np.lexsort((other, key))
    key, other, logp = key[order], other[order], logp[order]
    counts = np.bincount(key, minlength=C)
    K = max(int(counts.max()) if counts.size else 0, 1)
    idx = np.full((C, K), -1, dtype=np.int64)
    lp = np.full((C, K), -np.inf)
    pos = np.zeros(C, dtype=np.int64)
    for k, o, p in zip(key, other, logp):
        idx[k, pos[k]] = o
        lp[k, pos[k]] = p
        pos[k] += 1
    return idx, lp


# -- inference -------------------------------------------------------------


def _check_obs(hmm, obs):
    obs = np.asarray(obs, dtype=float)
    if obs.ndim != 2 or obs.shape[1] != hmm.dim:
        raise DimensionMismatch(f"model dimension is {hmm.dim}, observations have shape {obs.shape}")
    if obs.shape[0] < 1:
        raise ValueError("observation sequence must have at least one frame")
    return obs


def composite_loglik(hmm, obs):
    """Composite-state emission log densities, shape (T, C)."""
    obs = _check_obs(hmm, obs)
    return hmm.chain.emission_index(hmm.state_log_likelihood(obs))


def log_forward(hmm, obs):
    """log P(O | model); ``-inf`` when no state path can produce ``obs``."""
    return forward_from_emissions(hmm, hmm.state_log_likelihood(_check_obs(hmm, obs)))


def forward_from_emissions(hmm, state_loglik):
    """``log_forward`` given precomputed per-state emission log densities (T, N)."""
    ch = hmm.chain
    la = _kernels.forward(ch.log_init, ch.pred_idx, ch.pred_logp, ch.emission_index(state_loglik))
    return float(_kernels.logsumexp_row(la[-1]))


def viterbi(hmm, obs):
    """Most probable state path and its joint log probability.

    Ties resolve to the smallest composite-state index.
    """
    return viterbi_from_emissions(hmm, hmm.state_log_likelihood(_check_obs(hmm, obs)))


def viterbi_from_emissions(hmm, state_loglik):
    """``viterbi`` given precomputed per-state emission log densities (T, N)."""
    ch = hmm.chain
    logb = ch.emission_index(state_loglik)
    path, score = _kernels.viterbi(ch.log_init, ch.pred_idx, ch.pred_logp, logb)
    if path[-1] < 0:
        # all paths have zero emission density, or the mask admits none
        if np.isneginf(logb).all(axis=1).any():
            return np.zeros(len(logb), dtype=np.int64), -np.inf
        raise NoValidPath("the transition mask admits no path of this length")
    return ch.last[path], float(score)


# -- order bootstrap -------------------------------------------------------


def bootstrap_order(hmm, target_order=None):
    """Initialize an order-(r+1) model from a trained order-r model.

    The order-r conditionals are broadcast across the new oldest context
    index, and the order-r tensor becomes the new boot table, so the
    resulting chain assigns every state sequence the same probability.
    """
    r = hmm.order
    if target_order is None:
        target_order = r + 1
    if target_order != r + 1 or target_order > MAX_ORDER:
        raise BadOrder(f"can only bootstrap order {r} to {r + 1} (max {MAX_ORDER}), got {target_order}")
    n = hmm.n_states
    new_trans = np.broadcast_to(hmm.transitions[None], (n,) * (target_order + 1)).copy()
    boot1 = hmm.transitions.copy() if r == 1 else hmm.boot1.copy()
    boot2 = hmm.transitions.copy() if r == 2 else None
    return CircularHmm(
        pi=hmm.pi.copy(),
        transitions=new_trans,
        weights=hmm.weights.copy(),
        means=hmm.means.copy(),
        variances=hmm.variances.copy(),
        mask=hmm.mask.copy(),
        boot1=boot1,
        boot2=boot2,
        var_floor=None if hmm.var_floor is None else hmm.var_floor.copy(),
    )


# -- construction helpers --------------------------------------------------


def normalize_table(table, mask):
    """Renormalize conditional rows over allowed successors.

    Rows with no mass become uniform over the allowed successors.
    """
    table = _masked_rows(np.asarray(table, dtype=float), mask)
    allowed = np.broadcast_to(mask, table.shape[-2:])
    allowed = np.broadcast_to(allowed, table.shape).astype(float)
    sums = table.sum(axis=-1, keepdims=True)
    uniform = allowed / allowed.sum(axis=-1, keepdims=True)
    with np.errstate(invalid="ignore", divide="ignore"):
        out = np.where(sums > 0, table / np.where(sums > 0, sums, 1.0), uniform)
    return out


def random_hmm(n_states, order, dim, n_mix=1, rng=None, mask=None, mean_scale=1.0, concentration=1.0):
    """A random valid model (used by tests and the synthetic corpus)."""
    rng = np.random.default_rng(rng)
    if mask is None:
        mask = circular_mask(n_states)
    if order not in (1, 2, 3):
        raise BadOrder(f"order must be 1, 2 or 3, got {order}")

    def cond(shape):
        raw = rng.gamma(concentration, size=shape) + 1e-3
        return normalize_table(raw, mask)

    pi = rng.gamma(concentration, size=n_states) + 1e-3
    pi /= pi.sum()
    weights = rng.gamma(2.0, size=(n_states, n_mix)) + 1e-3
    weights /= weights.sum(axis=1, keepdims=True)
    return CircularHmm(
        pi=pi,
        transitions=cond((n_states,) * (order + 1)),
        weights=weights,
        means=rng.normal(scale=mean_scale, size=(n_states, n_mix, dim)),
        variances=rng.uniform(0.5, 1.5, size=(n_states, n_mix, dim)),
        mask=mask,
        boot1=cond((n_states, n_states)) if order >= 2 else None,
        boot2=cond((n_states,) * 3) if order == 3 else None,
    )


def chain_log_prob(hmm, path):
    """Direct log Prob(Q) of a state sequence from the model tables."""
    path = [int(q) for q in path]
    r = hmm.order
    with np.errstate(divide="ignore"):
        lp = np.log(hmm.pi[path[0]])
        for t in range(1, len(path)):
            if t == 1 and r >= 2:
                p = hmm.boot1[path[0], path[1]]
            elif t == 2 and r == 3:
                p = hmm.boot2[path[0], path[1], path[2]]
            else:
                p = hmm.transitions[tuple(path[t - r : t + 1])]
            lp += np.log(p)
    return float(lp)


def enumerate_paths(n_states, length):
    return product(range(n_states), repeat=length)
