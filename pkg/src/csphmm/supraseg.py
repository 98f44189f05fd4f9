"""Suprasegmental (prosodic) layer stacked on the acoustic circular HMMs.

Each enrolled speaker has an acoustic model and a 3-state prosodic model of
the same order.  An utterance is segmented with the acoustic Viterbi path
(three acoustic states per suprasegmental state), frame-level prosody is
pooled into blocks, and the two log-likelihoods are mixed:

    score = (1 - alpha) * L_acoustic + alpha * L_prosodic
"""

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted

from .exceptions import DimensionMismatch, EmptyRegistry, EmptyTrack, EmptyTrainingSet
from .hmm.io import dumps, model_from_dict, model_to_dict
from .hmm.model import forward_from_emissions, log_forward, viterbi, viterbi_from_emissions
from .hmm.training import train_chain
from .validation import check_alpha

SPEAKER_FORMAT = "csphmm-speaker/1"
STATES_PER_SEGMENT = 3
PROSODIC_STATES = 3
PROSODIC_DIM = 5
NORMALIZATIONS = ("none", "per-frame")


@dataclass(frozen=True)
class FusionConfig:
    alpha: float = 0.5
    normalization: str = "per-frame"

    def __post_init__(self):
        check_alpha(self.alpha)
        if self.normalization not in NORMALIZATIONS:
            raise ValueError(f"normalization must be one of {NORMALIZATIONS}")


@dataclass(frozen=True)
class ModelConfig:
    n_states: int = 9
    n_mix: int = 4
    prosodic_mix: int = 2
    block: int = 10
    max_iter: int = 20
    tol: float = 1e-4
    seed: int = 0
    prosodic_floor: float = 0.1

    def __post_init__(self):
        if self.n_states % STATES_PER_SEGMENT:
            raise ValueError("n_states must be divisible by 3")
        if self.block < 1:
            raise ValueError("block must be >= 1")


@dataclass
class SpeakerModel:
    speaker_id: str
    acoustic: object
    prosodic: object
    alpha_default: float = 0.5
    block: int = 10
    config_hash: str = ""

    def __post_init__(self):
        check_alpha(self.alpha_default)
        if self.acoustic.order != self.prosodic.order:
            raise ValueError("acoustic and prosodic models must share the same order")
        if self.prosodic.n_states != PROSODIC_STATES:
            raise ValueError("the prosodic model must have 3 states")

    @property
    def order(self):
        return self.acoustic.order


@dataclass
class IdentificationResult:
    winner: str
    index: int
    scores: dict


# -- segmentation and prosodic observations -------------------------------


def segment_utterance(acoustic, obs):
    """Suprasegmental index of every frame: ``viterbi_state // 3``."""
    if acoustic.n_states % STATES_PER_SEGMENT:
        raise ValueError("acoustic model needs a state count divisible by 3")
    path, _ = viterbi(acoustic, obs)
    return path // STATES_PER_SEGMENT


def _blocks(n_frames, block):
    bounds = list(range(0, n_frames, block)) + [n_frames]
    if len(bounds) > 2 and bounds[-1] - bounds[-2] < block / 2:
        del bounds[-2]
    return list(zip(bounds[:-1], bounds[1:]))


def build_prosodic_obs(track, seg, block=10):
    """Pool frame prosody into one 5-vector per block.

    Each block yields [mean log-energy, least-squares log-energy slope per
    frame, mean F0 of voiced frames (0 if none), voiced fraction, dominant
    segment / 2].  A trailing block shorter than ``block / 2`` is merged into
    the previous one.  Ties for the dominant segment go to the lower index.
    """
    seg = np.asarray(seg)
    if len(track) == 0:
        raise EmptyTrack("prosodic track has no frames")
    if len(seg) != len(track):
        raise ValueError("segmentation and track cover different frame counts")
    if block < 1:
        raise ValueError("block must be >= 1")
    bounds = _blocks(len(track), block)
    starts = np.array([a for a, _ in bounds])
    sizes = np.array([b - a for a, b in bounds], dtype=float)
    e = np.asarray(track.log_energy, dtype=float)
    v = np.asarray(track.voiced, dtype=bool)
    f0 = np.where(v, track.f0, 0.0)

    mean_e = np.add.reduceat(e, starts) / sizes
    # centred frame index within each block
    pos = np.arange(len(e)) - np.repeat(starts, sizes.astype(int))
    x = pos - np.repeat((sizes - 1) / 2.0, sizes.astype(int))
    sxx = np.add.reduceat(x * x, starts)
    sxy = np.add.reduceat(x * (e - np.repeat(mean_e, sizes.astype(int))), starts)
    slope = np.divide(sxy, sxx, out=np.zeros_like(sxy), where=sxx > 0)

    n_voiced = np.add.reduceat(v.astype(float), starts)
    f0_sum = np.add.reduceat(f0, starts)
    mean_f0 = np.divide(f0_sum, n_voiced, out=np.zeros_like(f0_sum), where=n_voiced > 0)

    block_id = np.repeat(np.arange(len(bounds)), sizes.astype(int))
    counts = np.zeros((len(bounds), PROSODIC_STATES))
    np.add.at(counts, (block_id, seg), 1.0)
    dominant = np.argmax(counts, axis=1) / 2.0
    return np.column_stack([mean_e, slope, mean_f0, n_voiced / sizes, dominant])


def _pad_to_order(obs, order):
    if len(obs) >= order:
        return obs
    return np.vstack([obs, np.repeat(obs[-1:], order - len(obs), axis=0)])


def prosodic_observations(acoustic, utt, block, order):
    seg = segment_utterance(acoustic, utt.acoustic)
    return _pad_to_order(build_prosodic_obs(utt.prosody, seg, block), order)


# -- training --------------------------------------------------------------


def train_speaker_orders(utterances, orders=(1, 2, 3), config=ModelConfig(), speaker_id="", alpha=0.5, config_hash=""):
    """Train one speaker for several orders sharing one acoustic bootstrap chain.

    Returns ``{order: SpeakerModel}``.
    """
    if not utterances:
        raise EmptyTrainingSet(f"no training utterances for speaker {speaker_id!r}")
    top = max(orders)
    acoustic = train_chain(
        [u.acoustic for u in utterances],
        top,
        n_states=config.n_states,
        n_mix=config.n_mix,
        max_iters=config.max_iter,
        rel_tol=config.tol,
        seed=config.seed,
    )
    out = {}
    for r in sorted(orders):
        ac = acoustic[r - 1][0]
        out[r] = _train_prosodic(ac, utterances, r, config, speaker_id, alpha, config_hash)
    return out


def _train_prosodic(acoustic, utterances, order, config, speaker_id, alpha, config_hash):
    pobs = [prosodic_observations(acoustic, u, config.block, order) for u in utterances]
    prosodic = train_chain(
        pobs,
        order,
        n_states=PROSODIC_STATES,
        n_mix=config.prosodic_mix,
        max_iters=config.max_iter,
        rel_tol=config.tol,
        seed=config.seed + 1,
        var_floor_scale=config.prosodic_floor,
    )[-1][0]
    return SpeakerModel(speaker_id, acoustic, prosodic, alpha, config.block, config_hash)


def train_speaker(utterances, order, config=ModelConfig(), speaker_id="", alpha=0.5, config_hash=""):
    """Acoustic chain 1..order, then a prosodic chain 1..order on top of it."""
    return train_speaker_orders(utterances, (order,), config, speaker_id, alpha, config_hash)[order]


def train_speaker_from_acoustic(acoustic, utterances, config=ModelConfig(), speaker_id="", alpha=0.5, config_hash=""):
    """Like ``train_speaker`` but starting from a trained lower-order acoustic model.

    ``acoustic`` of order r-1 is bootstrapped to r and retrained; the result is
    identical to training order r from scratch with the same config.
    """
    from .hmm.model import bootstrap_order
    from .hmm.training import baum_welch

    model, _ = baum_welch(
        bootstrap_order(acoustic),
        [u.acoustic for u in utterances],
        max_iters=config.max_iter,
        rel_tol=config.tol,
    )
    return _train_prosodic(model, utterances, model.order, config, speaker_id, alpha, config_hash), model


# -- scoring ---------------------------------------------------------------


def score_components(model, utt, normalization="per-frame"):
    """``(L_acoustic, L_prosodic)`` log-likelihoods, optionally per observation."""
    if utt.acoustic.shape[1] != model.acoustic.dim:
        raise DimensionMismatch(f"model expects {model.acoustic.dim}-dim features, got {utt.acoustic.shape[1]}")
    # one emission pass serves both the forward score and the segmentation
    emis = model.acoustic.state_log_likelihood(utt.acoustic)
    la = forward_from_emissions(model.acoustic, emis)
    path, _ = viterbi_from_emissions(model.acoustic, emis)
    seg = path // STATES_PER_SEGMENT
    pobs = _pad_to_order(build_prosodic_obs(utt.prosody, seg, model.block), model.order)
    lp = log_forward(model.prosodic, pobs)
    if normalization == "per-frame":
        la /= len(utt.acoustic)
        lp /= len(pobs)
    return la, lp


def fuse(la, lp, alpha):
    if alpha == 0.0:
        return la
    if alpha == 1.0:
        return lp
    return (1.0 - alpha) * la + alpha * lp


def fused_score(model, utt, fusion=FusionConfig()):
    la, lp = score_components(model, utt, fusion.normalization)
    return fuse(la, lp, fusion.alpha)


def _argmax_first(scores):
    s = np.where(np.isnan(scores), -np.inf, scores)
    return int(np.argmax(s))


def identify(models, utt, fusion=FusionConfig()):
    """Pick the enrolled speaker with the highest fused score (first index on ties)."""
    if not models:
        raise EmptyRegistry("no speaker models enrolled")
    scores = np.array([fused_score(m, utt, fusion) for m in models])
    i = _argmax_first(scores)
    return IdentificationResult(models[i].speaker_id, i, {m.speaker_id: float(s) for m, s in zip(models, scores)})


# -- persistence -----------------------------------------------------------


def speaker_to_dict(model):
    return {
        "format": SPEAKER_FORMAT,
        "speaker_id": model.speaker_id,
        "order": model.order,
        "alpha_default": model.alpha_default,
        "block": model.block,
        "config_hash": model.config_hash,
        "acoustic": model_to_dict(model.acoustic),
        "prosodic": model_to_dict(model.prosodic),
    }


def speaker_from_dict(d):
    from .exceptions import ModelFormatError

    if d.get("format") != SPEAKER_FORMAT:
        raise ModelFormatError(f"unsupported speaker format {d.get('format')!r}")
    return SpeakerModel(
        speaker_id=d["speaker_id"],
        acoustic=model_from_dict(d["acoustic"]),
        prosodic=model_from_dict(d["prosodic"]),
        alpha_default=float(d["alpha_default"]),
        block=int(d["block"]),
        config_hash=d.get("config_hash", ""),
    )


def save_speaker(model, path):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dumps(speaker_to_dict(model)))


def load_speaker(path):
    with open(path, encoding="utf-8") as fh:
        return speaker_from_dict(json.load(fh))


# -- estimator -------------------------------------------------------------


class CSPHMMClassifier(BaseEstimator, ClassifierMixin):
    """Speaker identification with circular suprasegmental HMMs.

    ``X`` is a list of ``Utterance`` objects and ``y`` the speaker labels.
    Speakers are registered in sorted label order, which also fixes the
    tie-break of ``predict``.
    """

    def __init__(
        self,
        order=3,
        n_states=9,
        n_mix=4,
        prosodic_mix=2,
        block=10,
        alpha=0.5,
        normalization="per-frame",
        max_iter=20,
        tol=1e-4,
        prosodic_floor=0.1,
        random_state=0,
        n_jobs=1,
    ):
        self.order = order
        self.n_states = n_states
        self.n_mix = n_mix
        self.prosodic_mix = prosodic_mix
        self.block = block
        self.alpha = alpha
        self.normalization = normalization
        self.max_iter = max_iter
        self.tol = tol
        self.prosodic_floor = prosodic_floor
        self.random_state = random_state
        self.n_jobs = n_jobs

    def _model_config(self):
        return ModelConfig(
            self.n_states,
            self.n_mix,
            self.prosodic_mix,
            self.block,
            self.max_iter,
            self.tol,
            self.random_state,
            self.prosodic_floor,
        )

    def _map(self, fn, items):
        if self.n_jobs and self.n_jobs > 1:
            with ThreadPoolExecutor(self.n_jobs) as pool:
                return list(pool.map(fn, items))
        return [fn(i) for i in items]

    def fit(self, X, y):
        y = np.asarray(y)
        if len(X) == 0:
            raise EmptyTrainingSet("no training utterances")
        if len(X) != len(y):
            raise ValueError("X and y differ in length")
        FusionConfig(self.alpha, self.normalization)
        cfg = self._model_config()
        self.classes_ = np.unique(y)

        def one(spk):
            utts = [u for u, lab in zip(X, y) if lab == spk]
            return train_speaker(utts, self.order, cfg, str(spk), self.alpha)

        self.models_ = self._map(one, list(self.classes_))
        return self

    @classmethod
    def from_models(cls, models, **params):
        """Wrap already-trained ``SpeakerModel`` objects (registry order kept)."""
        if not models:
            raise EmptyRegistry("no speaker models given")
        params.setdefault("order", models[0].order)
        clf = cls(**params)
        clf.models_ = list(models)
        clf.classes_ = np.array([m.speaker_id for m in models])
        return clf

    def score_components(self, X):
        """Arrays ``(L_acoustic, L_prosodic)`` of shape (n_utterances, n_speakers)."""
        check_is_fitted(self, "models_")
        rows = self._map(lambda u: [score_components(m, u, self.normalization) for m in self.models_], list(X))
        arr = np.array(rows, dtype=float).reshape(len(X), len(self.models_), 2)
        return arr[..., 0], arr[..., 1]

    def decision_function(self, X):
        la, lp = self.score_components(X)
        return fuse(la, lp, check_alpha(self.alpha))

    def predict(self, X):
        scores = self.decision_function(X)
        return self.classes_[[_argmax_first(row) for row in scores]]
