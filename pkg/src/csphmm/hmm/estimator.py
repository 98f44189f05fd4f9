import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ..validation import check_sequences
from .model import log_forward, viterbi
from .sampling import sample
from .training import train_chain


class CircularHMM(BaseEstimator):
    """Circular HMM density estimator of order 1, 2 or 3.

    ``fit`` trains an order-1 model from scratch and, for higher orders,
    bootstraps and retrains each successive order.

    Parameters
    ----------
    n_states : int
        Number of states on the ring.
    order : int
        Markov order of the state chain (1, 2 or 3).
    n_mix : int
        Gaussian components per state.
    max_iter, tol : int, float
        Baum-Welch iteration cap and relative log-likelihood tolerance.
    random_state : int or None
        Seed for the k-means initialization.
    mask : array of bool or None
        Allowed transitions; ``None`` selects the ring (self and next state).

    Attributes
    ----------
    model_ : CircularHmm
        Trained parameters of the requested order.
    chain_ : list of CircularHmm
        Trained model for every order 1..order.
    traces_ : list of list of float
        Log-likelihood trace of each Baum-Welch run.
    """

    def __init__(self, n_states=9, order=1, n_mix=4, max_iter=20, tol=1e-4, random_state=None, mask=None):
        self.n_states = n_states
        self.order = order
        self.n_mix = n_mix
        self.max_iter = max_iter
        self.tol = tol
        self.random_state = random_state
        self.mask = mask

    def fit(self, X, lengths=None):
        seqs = check_sequences(X, lengths)
        chain = train_chain(
            seqs,
            self.order,
            n_states=self.n_states,
            n_mix=self.n_mix,
            max_iters=self.max_iter,
            rel_tol=self.tol,
            seed=self.random_state,
            mask=self.mask,
        )
        self.chain_ = [m for m, _ in chain]
        self.traces_ = [t for _, t in chain]
        self.model_ = self.chain_[-1]
        self.n_features_in_ = seqs[0].shape[1]
        return self

    def score_samples(self, X, lengths=None):
        """Log-likelihood of each sequence."""
        check_is_fitted(self, "model_")
        return np.array([log_forward(self.model_, s) for s in check_sequences(X, lengths)])

    def score(self, X, lengths=None):
        """Total log-likelihood of all sequences."""
        return float(self.score_samples(X, lengths).sum())

    def decode(self, X):
        """Viterbi ``(log_prob, state_path)`` for a single sequence."""
        check_is_fitted(self, "model_")
        (seq,) = check_sequences([X])
        path, lp = viterbi(self.model_, seq)
        return lp, path

    def predict(self, X):
        return self.decode(X)[1]

    def sample(self, n_samples=1, random_state=None):
        check_is_fitted(self, "model_")
        return sample(self.model_, n_samples, random_state)
