"""Input validation helpers shared by the estimators."""

import numpy as np
from sklearn.utils import check_array

from .exceptions import DimensionMismatch, EmptyDataset


def check_sequence(seq, dim=None):
    seq = check_array(seq, dtype=np.float64, ensure_2d=True)
    if dim is not None and seq.shape[1] != dim:
        raise DimensionMismatch(f"expected {dim} features, got {seq.shape[1]}")
    return seq


def check_sequences(X, lengths=None, dim=None):
    """Normalize ``X`` into a list of finite 2-D float arrays.

    ``X`` is either a list of ``(T_i, D)`` arrays or one stacked array split by
    ``lengths`` (hmmlearn convention).
    """
    if lengths is not None:
        X = check_array(X, dtype=np.float64)
        lengths = np.asarray(lengths, dtype=int)
        if lengths.sum() != X.shape[0]:
            raise ValueError("lengths do not add up to the number of rows")
        X = np.split(X, np.cumsum(lengths)[:-1])
    elif isinstance(X, np.ndarray) and X.ndim == 2:
        X = [X]
    if len(X) == 0:
        raise EmptyDataset("no sequences given")
    seqs = [check_sequence(s, dim) for s in X]
    if len({s.shape[1] for s in seqs}) != 1:
        raise DimensionMismatch("sequences have inconsistent feature dimensions")
    return seqs


def check_alpha(alpha):
    alpha = float(alpha)
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must lie in [0, 1], got {alpha}")
    return alpha
