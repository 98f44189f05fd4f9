import numpy as np


def _draw(p, u):
    cdf = np.cumsum(p)
    return min(int(np.searchsorted(cdf, u * cdf[-1], side="right")), len(p) - 1)


def sample_path(hmm, length, rng):
    """Draw a state sequence from the exact chain law (boot tables included)."""
    r = hmm.order
    u = rng.random(length)
    path = np.empty(length, dtype=np.int64)
    path[0] = _draw(hmm.pi, u[0])
    for t in range(1, length):
        if t == 1 and r >= 2:
            p = hmm.boot1[path[0]]
        elif t == 2 and r == 3:
            p = hmm.boot2[path[0], path[1]]
        else:
            p = hmm.transitions[tuple(path[t - r : t])]
        path[t] = _draw(p, u[t])
    return path


def sample(hmm, length, seed=None):
    """Sample ``(observations, state_path)``; deterministic for a given seed."""
    if length < 1:
        raise ValueError("length must be >= 1")
    rng = np.random.default_rng(seed)
    path = sample_path(hmm, length, rng)
    cdf = np.cumsum(hmm.weights[path], axis=1)
    u = rng.random(length)[:, None] * cdf[:, -1:]
    comps = np.minimum((cdf <= u).sum(axis=1), hmm.n_mix - 1)
    mu = hmm.means[path, comps]
    sd = np.sqrt(hmm.variances[path, comps])
    obs = mu + sd * rng.standard_normal(mu.shape)
    return obs, path
