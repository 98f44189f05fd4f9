"""Corpus manifests, standard splits, cross-validation partitions and SSF1 feature files."""

import csv
import struct
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .exceptions import (
    BadEnumValue,
    DuplicateRecord,
    FeatureFileError,
    MissingField,
    SpeakerMissingTrainData,
    TooFewRecords,
    UnreadableFile,
)
from .frontend import ProsodicTrack, Utterance, read_wav

GENDERS = ("male", "female")
ENVIRONMENTS = ("neutral", "shouted")
SOURCE_KINDS = ("audio", "features")
MANIFEST_COLUMNS = ("speaker_id", "gender", "sentence_id", "repetition", "environment", "source_kind", "source_path")
TRAIN_SENTENCES = (1, 2, 3, 4)
TEST_SENTENCES = (5, 6, 7, 8)

SSF_MAGIC = b"SSF1"
_SSF_HEADER = struct.Struct("<4sII")


@dataclass(frozen=True)
class UtteranceRecord:
    speaker_id: str
    gender: str
    sentence_id: int
    repetition: int
    environment: str
    source_kind: str
    source_path: str

    def __post_init__(self):
        if self.gender not in GENDERS:
            raise BadEnumValue(f"gender must be one of {GENDERS}, got {self.gender!r}")
        if self.environment not in ENVIRONMENTS:
            raise BadEnumValue(f"environment must be one of {ENVIRONMENTS}, got {self.environment!r}")
        if self.source_kind not in SOURCE_KINDS:
            raise BadEnumValue(f"source_kind must be one of {SOURCE_KINDS}, got {self.source_kind!r}")
        if not 1 <= self.sentence_id <= 8:
            raise BadEnumValue(f"sentence_id must lie in 1..8, got {self.sentence_id}")
        if not 1 <= self.repetition <= 9:
            raise BadEnumValue(f"repetition must lie in 1..9, got {self.repetition}")
        if not self.speaker_id:
            raise MissingField("speaker_id is empty")
        if not self.source_path:
            raise MissingField("source_path is empty")

    @property
    def key(self):
        return (self.speaker_id, self.sentence_id, self.repetition, self.environment)

    @property
    def audio_path(self):
        return self.source_path if self.source_kind == "audio" else None

    @property
    def feature_path(self):
        return self.source_path if self.source_kind == "features" else None

    def as_row(self):
        return [
            self.speaker_id,
            self.gender,
            str(self.sentence_id),
            str(self.repetition),
            self.environment,
            self.source_kind,
            self.source_path,
        ]


@dataclass(frozen=True)
class CorpusManifest:
    records: tuple = ()
    root: Path = field(default=Path("."), compare=False)

    def __post_init__(self):
        object.__setattr__(self, "records", tuple(self.records))
        seen = {}
        for i, rec in enumerate(self.records):
            if rec.key in seen:
                raise DuplicateRecord(f"duplicate record {rec.key} (first seen at position {seen[rec.key]})", row=i)
            seen[rec.key] = i

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    @property
    def speakers(self):
        """Speaker ids in order of first appearance."""
        return list(dict.fromkeys(r.speaker_id for r in self.records))

    def gender_of(self, speaker_id):
        for r in self.records:
            if r.speaker_id == speaker_id:
                return r.gender
        raise KeyError(speaker_id)

    def resolve(self, path):
        p = Path(path)
        return p if p.is_absolute() else Path(self.root) / p


# -- manifest i/o ----------------------------------------------------------


def _parse_row(row, lineno):
    values = {}
    for col in MANIFEST_COLUMNS:
        v = row.get(col)
        if v is None or v.strip() == "":
            raise MissingField(f"missing value for {col!r}", row=lineno)
        values[col] = v.strip()
    for col in ("sentence_id", "repetition"):
        try:
            values[col] = int(values[col])
        except ValueError:
            raise BadEnumValue(f"{col} must be an integer, got {values[col]!r}", row=lineno) from None
    try:
        return UtteranceRecord(**values)
    except (BadEnumValue, MissingField) as exc:
        raise type(exc)(str(exc), row=lineno) from None


def load_manifest(path):
    """Parse and validate a manifest CSV (header row required)."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except (OSError, UnicodeDecodeError) as exc:
        raise UnreadableFile(f"cannot read manifest {path}: {exc}") from exc
    root = path.parent
    if not text.strip():
        return CorpusManifest((), root)
    reader = csv.DictReader(text.splitlines())
    header = reader.fieldnames or []
    missing = [c for c in MANIFEST_COLUMNS if c not in header]
    if missing:
        raise MissingField(f"header lacks columns {missing}", row=1)
    records, seen = [], {}
    for lineno, row in enumerate(reader, start=2):
        if not any((v or "").strip() for v in row.values()):
            continue
        rec = _parse_row(row, lineno)
        if rec.key in seen:
            raise DuplicateRecord(f"duplicate of row {seen[rec.key]}: {rec.key}", row=lineno)
        seen[rec.key] = lineno
        records.append(rec)
    return CorpusManifest(tuple(records), root)


def write_manifest(manifest, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(MANIFEST_COLUMNS)
        for rec in manifest.records:
            w.writerow(rec.as_row())


# -- splits ----------------------------------------------------------------


@dataclass(frozen=True)
class SplitSpec:
    train: tuple
    test_neutral: tuple
    test_shouted: tuple

    def test(self, environment):
        return self.test_neutral if environment == "neutral" else self.test_shouted

    @property
    def speakers(self):
        return list(dict.fromkeys(r.speaker_id for r in self.train))


def standard_split(manifest):
    """Neutral sentences 1-4 train; sentences 5-8 test, one set per environment."""
    if len(manifest) == 0:
        raise TooFewRecords("manifest is empty")
    train = tuple(r for r in manifest if r.environment == "neutral" and r.sentence_id in TRAIN_SENTENCES)
    test_n = tuple(r for r in manifest if r.environment == "neutral" and r.sentence_id in TEST_SENTENCES)
    test_s = tuple(r for r in manifest if r.environment == "shouted" and r.sentence_id in TEST_SENTENCES)
    have = {r.speaker_id for r in train}
    lacking = [s for s in manifest.speakers if s not in have]
    if lacking:
        raise SpeakerMissingTrainData(f"no neutral sentence 1-4 utterances for speakers {lacking}")
    return SplitSpec(train, test_n, test_s)


def cv_partition(manifest, k=5, train_fraction=1 / 3, seed=0):
    """Random k-way partition, each part split into train and test rows.

    Records are shuffled with ``seed`` and dealt round-robin into ``k``
    subsets.  Inside a subset, rows are ordered by interleaving speakers and
    the first ``round(train_fraction * size)`` become training rows, so every
    speaker of the subset is represented in training when possible.
    """
    if k < 2:
        raise TooFewRecords(f"k must be >= 2, got {k}")
    if not 0.0 < train_fraction < 1.0:
        raise ValueError("train_fraction must lie strictly between 0 and 1")
    records = list(manifest.records)
    perm = np.random.default_rng(seed).permutation(len(records))
    shuffled = [records[i] for i in perm]
    out = []
    for i in range(k):
        subset = shuffled[i::k]
        by_spk = defaultdict(list)
        for rec in subset:
            by_spk[rec.speaker_id].append(rec)
        interleaved = []
        depth = max((len(v) for v in by_spk.values()), default=0)
        for d in range(depth):
            for spk in by_spk:
                if d < len(by_spk[spk]):
                    interleaved.append(by_spk[spk][d])
        n_train = int(round(train_fraction * len(subset)))
        train, test = tuple(interleaved[:n_train]), tuple(interleaved[n_train:])
        if not train or not test:
            raise TooFewRecords(f"subset {i} of {len(subset)} records yields {len(train)} train / {len(test)} test rows")
        out.append((train, test))
    return out


# -- SSF1 feature files ----------------------------------------------------


def write_features(path, matrix):
    """Write a T x D matrix: ``SSF1``, u32 T, u32 D, then little-endian float64 rows."""
    m = np.ascontiguousarray(matrix, dtype="<f8")
    if m.ndim != 2:
        raise FeatureFileError("feature matrix must be 2-D")
    with open(path, "wb") as fh:
        fh.write(_SSF_HEADER.pack(SSF_MAGIC, m.shape[0], m.shape[1]))
        fh.write(m.tobytes())


def read_features(path):
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise FeatureFileError(f"cannot read feature file {path}: {exc}") from exc
    if len(raw) < _SSF_HEADER.size:
        raise FeatureFileError(f"{path}: truncated header")
    magic, T, D = _SSF_HEADER.unpack_from(raw)
    if magic != SSF_MAGIC:
        raise FeatureFileError(f"{path}: bad magic {magic!r}")
    body = raw[_SSF_HEADER.size :]
    if len(body) != 8 * T * D:
        raise FeatureFileError(f"{path}: expected {8 * T * D} payload bytes, found {len(body)}")
    return np.frombuffer(body, dtype="<f8").reshape(T, D).astype(float)


def prosody_path(acoustic_path):
    """Companion prosodic file of an acoustic feature file."""
    p = Path(acoustic_path)
    if p.name.endswith(".mfcc.ssf"):
        return p.with_name(p.name[: -len(".mfcc.ssf")] + ".pros.ssf")
    return p.with_name(p.stem + ".pros.ssf")


def write_utterance(acoustic_path, utt):
    write_features(acoustic_path, utt.acoustic)
    write_features(prosody_path(acoustic_path), utt.prosody.as_array())


def read_utterance(acoustic_path):
    acoustic = read_features(acoustic_path)
    track = ProsodicTrack.from_array(read_features(prosody_path(acoustic_path)))
    return Utterance(acoustic, track)


class FeatureStore:
    """Lazy record -> ``Utterance`` lookup with memoization.

    Feature records are read from their SSF1 files; audio records go through
    ``extractor`` (a ``FeatureExtractor``).
    """

    def __init__(self, manifest, extractor=None):
        self.manifest = manifest
        self.extractor = extractor
        self._cache = {}

    def __getitem__(self, record):
        if record.key not in self._cache:
            path = self.manifest.resolve(record.source_path)
            if record.source_kind == "features":
                self._cache[record.key] = read_utterance(path)
            else:
                if self.extractor is None:
                    from .frontend import FeatureExtractor

                    self.extractor = FeatureExtractor()
                self._cache[record.key] = self.extractor.extract(read_wav(path))
        return self._cache[record.key]

    def get(self, records):
        return [self[r] for r in records]
