"""Run configuration: defaults, key=value config files, flag overrides and hashing."""

import configparser
import hashlib
import json
from dataclasses import asdict, dataclass, fields, replace

from .validation import check_alpha

SECTION = "csphmm"

# fields that shape trained models; alpha, paths and threads do not
TRAINING_FIELDS = (
    "n_states",
    "n_mix",
    "prosodic_mix",
    "block",
    "max_iter",
    "tol",
    "prosodic_floor",
    "seed",
    "target_rate",
    "frame_len",
    "overlap",
    "n_ceps",
)
# fields that never change results
VOLATILE_FIELDS = ("threads", "manifest", "model_dir", "report_dir")


@dataclass(frozen=True)
class RunConfig:
    manifest: str = ""
    model_dir: str = "models"
    report_dir: str = "reports"
    order: int = 3
    n_states: int = 9
    n_mix: int = 4
    prosodic_mix: int = 2
    block: int = 10
    max_iter: int = 20
    tol: float = 1e-4
    prosodic_floor: float = 0.1
    alpha: float = 0.5
    normalization: str = "per-frame"
    gmm_components: int = 32
    vq_codewords: int = 64
    cv_folds: int = 5
    cv_train_fraction: float = 1 / 3
    target_rate: int = 12000
    frame_len: int = 240
    overlap: float = 0.3125
    n_ceps: int = 16
    seed: int = 0
    threads: int = 1

    def __post_init__(self):
        check_alpha(self.alpha)
        if self.order not in (1, 2, 3):
            raise ValueError(f"order must be 1, 2 or 3, got {self.order}")
        if self.n_states < 3 or self.n_states % 3:
            raise ValueError(f"n_states must be a positive multiple of 3, got {self.n_states}")
        if self.threads < 1:
            raise ValueError("threads must be >= 1")

    def model_config(self):
        from .supraseg import ModelConfig

        return ModelConfig(
            n_states=self.n_states,
            n_mix=self.n_mix,
            prosodic_mix=self.prosodic_mix,
            block=self.block,
            max_iter=self.max_iter,
            tol=self.tol,
            seed=self.seed,
            prosodic_floor=self.prosodic_floor,
        )

    def extractor(self):
        from .frontend import FeatureExtractor

        return FeatureExtractor(target_rate=self.target_rate, frame_len=self.frame_len, overlap=self.overlap, n_ceps=self.n_ceps)


def _coerce(name, raw):
    kind = {f.name: f.type for f in fields(RunConfig)}[name]
    if kind in (int, "int"):
        return int(raw)
    if kind in (float, "float"):
        return float(raw)
    return str(raw)


def load_config(path=None, **overrides):
    """Defaults, then ``path`` (``key = value`` lines, optional ``[csphmm]``
    header), then non-``None`` overrides."""
    values = {}
    if path is not None:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
        parser = configparser.ConfigParser()
        if not text.lstrip().startswith("["):
            text = f"[{SECTION}]\n" + text
        parser.read_string(text)
        known = {f.name for f in fields(RunConfig)}
        for key, raw in parser.items(SECTION) if parser.has_section(SECTION) else []:
            key = key.replace("-", "_")
            if key not in known:
                raise ValueError(f"unknown config key {key!r}")
            values[key] = _coerce(key, raw)
    values.update({k: v for k, v in overrides.items() if v is not None})
    return replace(RunConfig(), **values)


def _digest(payload):
    text = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode("utf-8")).hexdigest()[:16]


def config_hash(cfg):
    """Hash of every setting that can change an output (threads and paths excluded)."""
    return _digest({k: v for k, v in asdict(cfg).items() if k not in VOLATILE_FIELDS})


def training_hash(cfg):
    """Hash of the settings that determine trained speaker models."""
    d = asdict(cfg)
    return _digest({k: d[k] for k in TRAINING_FIELDS})
