"""GMM and VQ reference speaker models."""

import json
from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist
from scipy.special import logsumexp
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted

from .cluster import kmeans
from .exceptions import DimensionMismatch, EmptyTrainingSet, ModelFormatError, TooFewFrames
from .hmm.io import dumps
from .hmm.model import diag_gaussian_log_density
from .hmm.training import VAR_FLOOR_SCALE, variance_floor

GMM_FORMAT = "baseline-gmm/1"
VQ_FORMAT = "baseline-vq/1"


@dataclass
class GmmSpeakerModel:
    speaker_id: str
    weights: np.ndarray
    means: np.ndarray
    variances: np.ndarray
    var_floor: np.ndarray

    @property
    def dim(self):
        return self.means.shape[1]

    def frame_log_likelihood(self, frames):
        dens = diag_gaussian_log_density(frames, self.means, self.variances)
        with np.errstate(divide="ignore"):
            return logsumexp(dens + np.log(self.weights)[None], axis=1)


@dataclass
class VqCodebook:
    speaker_id: str
    centroids: np.ndarray

    @property
    def dim(self):
        return self.centroids.shape[1]


def _frames(frames, minimum, what):
    frames = np.asarray(frames, dtype=float)
    if frames.ndim != 2:
        raise ValueError("frames must be a 2-D array")
    if len(frames) < minimum:
        raise TooFewFrames(f"{what} needs at least {minimum} frames, got {len(frames)}")
    return frames


def _gmm_m_step(frames, resp, floor):
    R = resp.sum(axis=0)
    live = R > 0
    denom = np.where(live, R, 1.0)[:, None]
    means = (resp.T @ frames) / denom
    var = np.empty_like(means)
    for k in range(len(R)):
        diff = frames - means[k]
        var[k] = resp[:, k] @ (diff * diff)
    var = np.maximum(var / denom, floor)
    return R / R.sum(), means, var, live


def train_gmm(frames, n_components=32, seed=None, max_iter=100, tol=1e-6, speaker_id=""):
    """Diagonal GMM fitted by EM from a k-means start.

    Returns ``(model, trace)``; ``trace[i]`` is the total log-likelihood after
    ``i`` EM iterations.  Training stops when the relative gain drops below
    ``tol``.
    """
    frames = _frames(frames, n_components, "a GMM")
    floor = variance_floor([frames], VAR_FLOOR_SCALE)
    _, labels, _ = kmeans(frames, n_components, seed)
    resp = np.zeros((len(frames), n_components))
    resp[np.arange(len(frames)), labels] = 1.0
    weights, means, variances, live = _gmm_m_step(frames, resp, floor)
    # a cluster with a single member would have zero spread; use the pooled one
    single = resp.sum(axis=0) <= 1
    variances[single] = np.maximum(frames.var(axis=0), floor)
    means[~live] = frames.mean(axis=0)
    model = GmmSpeakerModel(speaker_id, weights, means, variances, floor)

    trace = []
    for it in range(max_iter + 1):
        dens = diag_gaussian_log_density(frames, model.means, model.variances)
        with np.errstate(divide="ignore"):
            joint = dens + np.log(model.weights)[None]
        ll = logsumexp(joint, axis=1)
        trace.append(float(ll.sum()))
        if it == max_iter:
            break
        if it > 0 and trace[-1] - trace[-2] < tol * abs(trace[-2]):
            break
        resp = np.exp(joint - ll[:, None])
        w, mu, var, live = _gmm_m_step(frames, resp, floor)
        model = GmmSpeakerModel(
            speaker_id,
            w,
            np.where(live[:, None], mu, model.means),
            np.where(live[:, None], var, model.variances),
            floor,
        )
    return model, trace


def train_vq(frames, n_codewords=64, seed=None, max_iter=100, tol=1e-8, speaker_id=""):
    """k-means codebook.  Returns ``(codebook, distortion_trace)``."""
    frames = _frames(frames, n_codewords, "a VQ codebook")
    centroids, _, trace = kmeans(frames, n_codewords, seed, max_iter=max_iter, tol=tol)
    return VqCodebook(speaker_id, centroids), trace


def score_baseline(model, obs):
    """Mean per-frame GMM log-likelihood, or negative mean VQ distortion."""
    obs = np.asarray(obs, dtype=float)
    if obs.ndim != 2 or obs.shape[1] != model.dim:
        raise DimensionMismatch(f"model expects {model.dim}-dim features, got shape {obs.shape}")
    if isinstance(model, GmmSpeakerModel):
        return float(model.frame_log_likelihood(obs).mean())
    if isinstance(model, VqCodebook):
        return -float(cdist(obs, model.centroids, "sqeuclidean").min(axis=1).mean())
    raise TypeError(f"not a baseline model: {type(model).__name__}")


# -- persistence -----------------------------------------------------------


def baseline_to_dict(model):
    if isinstance(model, GmmSpeakerModel):
        return {
            "format": GMM_FORMAT,
            "speaker_id": model.speaker_id,
            "weights": model.weights.tolist(),
            "means": model.means.tolist(),
            "variances": model.variances.tolist(),
            "var_floor": np.broadcast_to(model.var_floor, (model.dim,)).tolist(),
        }
    return {"format": VQ_FORMAT, "speaker_id": model.speaker_id, "centroids": model.centroids.tolist()}


def baseline_from_dict(d):
    fmt = d.get("format")
    if fmt == GMM_FORMAT:
        return GmmSpeakerModel(
            d["speaker_id"],
            np.array(d["weights"], dtype=float),
            np.array(d["means"], dtype=float),
            np.array(d["variances"], dtype=float),
            np.array(d["var_floor"], dtype=float),
        )
    if fmt == VQ_FORMAT:
        return VqCodebook(d["speaker_id"], np.array(d["centroids"], dtype=float))
    raise ModelFormatError(f"unsupported baseline format {fmt!r}")


def save_baseline(model, path):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dumps(baseline_to_dict(model)))


def load_baseline(path):
    with open(path, encoding="utf-8") as fh:
        return baseline_from_dict(json.load(fh))


# -- estimators ------------------------------------------------------------


def _acoustic(u):
    return getattr(u, "acoustic", u)


class _BaselineClassifier(BaseEstimator, ClassifierMixin):
    def _train_one(self, frames, speaker_id):
        raise NotImplementedError

    def fit(self, X, y):
        """``X``: utterances (or plain frame matrices); ``y``: speaker labels."""
        y = np.asarray(y)
        if len(X) == 0:
            raise EmptyTrainingSet("no training utterances")
        if len(X) != len(y):
            raise ValueError("X and y differ in length")
        self.classes_ = np.unique(y)
        self.models_ = []
        for spk in self.classes_:
            frames = np.concatenate([_acoustic(u) for u, lab in zip(X, y) if lab == spk])
            self.models_.append(self._train_one(frames, str(spk)))
        return self

    @classmethod
    def from_models(cls, models, **params):
        clf = cls(**params)
        clf.models_ = list(models)
        clf.classes_ = np.array([m.speaker_id for m in models])
        return clf

    def decision_function(self, X):
        check_is_fitted(self, "models_")
        return np.array([[score_baseline(m, _acoustic(u)) for m in self.models_] for u in X])

    def predict(self, X):
        scores = self.decision_function(X)
        scores = np.where(np.isnan(scores), -np.inf, scores)
        # np.argmax returns the first maximum, matching identify()
        return self.classes_[np.argmax(scores, axis=1)]


class GMMClassifier(_BaselineClassifier):
    """One diagonal GMM per speaker, scored by mean per-frame log-likelihood."""

    def __init__(self, n_components=32, max_iter=100, tol=1e-6, random_state=0):
        self.n_components = n_components
        self.max_iter = max_iter
        self.tol = tol
        self.random_state = random_state

    def _train_one(self, frames, speaker_id):
        return train_gmm(frames, self.n_components, self.random_state, self.max_iter, self.tol, speaker_id)[0]


class VQClassifier(_BaselineClassifier):
    """One k-means codebook per speaker, scored by negative mean distortion."""

    def __init__(self, n_codewords=64, max_iter=100, random_state=0):
        self.n_codewords = n_codewords
        self.max_iter = max_iter
        self.random_state = random_state

    def _train_one(self, frames, speaker_id):
        return train_vq(frames, self.n_codewords, self.random_state, self.max_iter, speaker_id=speaker_id)[0]
