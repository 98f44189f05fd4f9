"""Exhaustive-enumeration reference computations for small models."""

import numpy as np

from ..exceptions import TooLarge
from .model import _check_obs, chain_log_prob, enumerate_paths

MAX_PATHS = 10**6


def _path_scores(hmm, obs):
    obs = _check_obs(hmm, obs)
    T, n = obs.shape[0], hmm.n_states
    if n**T > MAX_PATHS:
        raise TooLarge(f"{n}^{T} paths exceeds the enumeration guard of {MAX_PATHS}")
    logb = hmm.state_log_likelihood(obs)
    for path in enumerate_paths(n, T):
        lp = chain_log_prob(hmm, path)
        if lp == -np.inf:
            continue
        yield path, lp + sum(logb[t, q] for t, q in enumerate(path))


def brute_force_loglik(hmm, obs):
    """log of the sum over every state sequence of Prob(Q) * prod_t b(o_t).

    Returns ``-inf`` when every path has zero probability.
    """
    scores = np.array([s for _, s in _path_scores(hmm, obs)])
    if scores.size == 0 or np.all(scores == -np.inf):
        return -np.inf
    m = scores.max()
    return float(m + np.log(np.sum(np.exp(scores - m))))


def brute_force_viterbi(hmm, obs):
    """Highest-scoring state sequence by enumeration (first maximum wins)."""
    best, best_path = -np.inf, None
    for path, s in _path_scores(hmm, obs):
        if s > best:
            best, best_path = s, path
    return (None if best_path is None else np.array(best_path)), float(best)
