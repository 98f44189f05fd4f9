"""Synthetic speaker corpus with a neutral/shouted mismatch.

Every speaker owns an order-1 circular HMM.  All speakers share the state
structure and a common set of "phonetic" means; speaker ``v`` adds an offset
of norm about ``separation`` to every mean, so ``separation=0`` makes all
generators identical.  Each frame also carries a prosodic track: a
speaker-level log-energy with a contour over the ring, a speaker-specific F0
contour, and state-dependent voicing.

Shouted utterances are fresh samples from the same generator, perturbed by
adding ``shout_offset`` to feature 0, scaling every feature by
``shout_scale`` and adding Gaussian noise of ``shout_noise`` times the
per-dimension standard deviation of the neutral training features.  The
prosodic track of a shouted utterance gains ``shout_energy_offset`` in
log-energy and has F0 scaled by ``shout_f0_scale``.
"""

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .corpus import TEST_SENTENCES, TRAIN_SENTENCES, CorpusManifest, UtteranceRecord, write_manifest, write_utterance
from .frontend import ProsodicTrack, Utterance
from .hmm.io import dumps, model_to_dict
from .hmm.model import CircularHmm, circular_mask
from .hmm.sampling import sample

ENERGY_BASE = 2.0


@dataclass(frozen=True)
class SynthConfig:
    n_speakers: int = 10
    n_sentences: int = 8
    n_reps: int = 9
    min_len: int = 60
    max_len: int = 120
    separation: float = 3.0
    dim: int = 8
    n_states: int = 9
    n_mix: int = 2
    stay_low: float = 0.75
    stay_high: float = 0.92
    f0_base: float = 140.0
    f0_spread: float = 0.15
    energy_spread: float = 0.1
    shout_offset: float = 3.0
    shout_scale: float = 1.2
    shout_noise: float = 0.3
    shout_energy_offset: float = 0.5
    shout_f0_scale: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.n_speakers < 2:
            raise ValueError("synthetic corpus needs at least two speakers")
        if self.n_sentences < 5:
            raise ValueError("need sentences beyond 1-4 to form a test set")
        if not 1 <= self.min_len <= self.max_len:
            raise ValueError("invalid sequence-length range")


@dataclass
class SyntheticGroundTruth:
    config: SynthConfig
    generators: dict
    f0: dict
    energy: dict
    train_std: np.ndarray

    def to_dict(self):
        return {
            "format": "csphmm-synth-truth/1",
            "config": asdict(self.config),
            "generators": {k: model_to_dict(m) for k, m in self.generators.items()},
            "f0": self.f0,
            "energy": self.energy,
            "train_std": self.train_std.tolist(),
        }


def speaker_ids(n):
    width = max(2, len(str(n)))
    return [f"spk{v + 1:0{width}d}" for v in range(n)]


def _generators(cfg, rng):
    n, d = cfg.n_states, cfg.dim
    mask = circular_mask(n)
    stay = rng.uniform(cfg.stay_low, cfg.stay_high, size=n)
    trans = np.zeros((n, n))
    for i in range(n):
        trans[i, i] = stay[i]
        trans[i, (i + 1) % n] += 1.0 - stay[i]
    pi = np.full(n, 0.1 / max(n - 1, 1))
    pi[0] = 0.9 if n > 1 else 1.0
    base_means = rng.normal(scale=1.5, size=(n, cfg.n_mix, d))
    base_vars = rng.uniform(0.5, 1.0, size=(n, cfg.n_mix, d))
    weights = rng.dirichlet(np.full(cfg.n_mix, 4.0), size=n)
    gens, f0, energy = {}, {}, {}
    for spk in speaker_ids(cfg.n_speakers):
        z = rng.normal(size=d)
        offset = cfg.separation * z / np.sqrt(d)
        gens[spk] = CircularHmm(
            pi=pi.copy(),
            transitions=trans.copy(),
            weights=weights.copy(),
            means=base_means + offset,
            variances=base_vars.copy(),
            mask=mask,
        )
        f0[spk] = float(cfg.f0_base * np.exp(cfg.f0_spread * cfg.separation * rng.normal()))
        energy[spk] = float(ENERGY_BASE + cfg.energy_spread * cfg.separation * rng.normal())
    return gens, f0, energy


def _prosody(cfg, path, f0_speaker, energy_speaker, rng, f0_scale=1.0, energy_offset=0.0):
    n = cfg.n_states
    ring = 2.0 * np.pi * path / n
    voiced = ((path % 3) != 2) ^ (rng.random(len(path)) < 0.05)
    f0 = f0_speaker * f0_scale * (1.0 + 0.05 * np.sin(ring)) * np.exp(0.02 * rng.standard_normal(len(path)))
    f0 = np.where(voiced, np.clip(f0, 60.0, 400.0), 0.0)
    log_energy = energy_speaker + energy_offset + 0.5 * np.cos(ring) + 0.2 * rng.standard_normal(len(path))
    log_energy = np.where(voiced, log_energy, log_energy - 1.0)
    return ProsodicTrack(log_energy, f0, voiced)


def _utt_rng(seed, v, sentence, rep, env):
    return np.random.default_rng(np.random.SeedSequence([seed, v, sentence, rep, env]))


def generate(cfg):
    """Generate utterances in memory.

    Returns ``(records_and_utterances, truth)`` where the first item is a list
    of ``(UtteranceRecord, Utterance)`` with ``source_path`` set to the
    relative feature path the utterance would be written to.
    """
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 0xC1C]))
    gens, f0, energy = _generators(cfg, rng)
    spks = speaker_ids(cfg.n_speakers)
    test_sents = [s for s in TEST_SENTENCES if s <= cfg.n_sentences]

    def draw(v, spk, sentence, rep, env):
        r = _utt_rng(cfg.seed, v, sentence, rep, env)
        length = int(r.integers(cfg.min_len, cfg.max_len + 1))
        obs, path = sample(gens[spk], length, r)
        return obs, path, r

    items = []
    neutral_train = []
    for v, spk in enumerate(spks):
        gender = "male" if v % 2 == 0 else "female"
        for sentence in list(TRAIN_SENTENCES) + test_sents:
            for rep in range(1, cfg.n_reps + 1):
                obs, path, r = draw(v, spk, sentence, rep, 0)
                track = _prosody(cfg, path, f0[spk], energy[spk], r)
                if sentence in TRAIN_SENTENCES:
                    neutral_train.append(obs)
                rec = UtteranceRecord(spk, gender, sentence, rep, "neutral", "features", _feature_name(spk, sentence, rep, "neutral"))
                items.append((rec, Utterance(obs, track)))
    train_std = np.concatenate(neutral_train).std(axis=0)

    for v, spk in enumerate(spks):
        gender = "male" if v % 2 == 0 else "female"
        for sentence in test_sents:
            for rep in range(1, cfg.n_reps + 1):
                obs, path, r = draw(v, spk, sentence, rep, 1)
                shouted = obs.copy()
                shouted[:, 0] += cfg.shout_offset
                shouted *= cfg.shout_scale
                shouted += cfg.shout_noise * train_std * r.standard_normal(obs.shape)
                track = _prosody(cfg, path, f0[spk], energy[spk], r, cfg.shout_f0_scale, cfg.shout_energy_offset)
                rec = UtteranceRecord(spk, gender, sentence, rep, "shouted", "features", _feature_name(spk, sentence, rep, "shouted"))
                items.append((rec, Utterance(shouted, track)))
    truth = SyntheticGroundTruth(cfg, gens, f0, energy, train_std)
    return items, truth


def _feature_name(spk, sentence, rep, env):
    return f"features/{spk}_s{sentence}_r{rep}_{env}.mfcc.ssf"


class MemoryStore:
    """``FeatureStore`` stand-in for generated corpora held in memory."""

    def __init__(self, items):
        self._by_key = {rec.key: utt for rec, utt in items}

    def __getitem__(self, record):
        return self._by_key[record.key]

    def get(self, records):
        return [self[r] for r in records]


def synth_corpus(cfg, out_dir=None):
    """Generate a corpus; when ``out_dir`` is given, write features and manifest there.

    Returns ``(manifest, truth, store)``.
    """
    items, truth = generate(cfg)
    root = Path(out_dir) if out_dir is not None else Path(".")
    manifest = CorpusManifest(tuple(rec for rec, _ in items), root)
    if out_dir is not None:
        (root / "features").mkdir(parents=True, exist_ok=True)
        for rec, utt in items:
            write_utterance(root / rec.source_path, utt)
        write_manifest(manifest, root / "manifest.csv")
        (root / "ground_truth.json").write_text(dumps(truth.to_dict()), encoding="utf-8")
    return manifest, truth, MemoryStore(items)


def load_truth(path):
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)
