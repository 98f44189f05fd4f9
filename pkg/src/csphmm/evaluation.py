"""Experiment harness: performance tables, t tests, alpha sweeps, cross-validation and reports."""

import csv
import io
import json
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import stats
from sklearn.base import clone

from . import __version__
from .corpus import GENDERS, cv_partition
from .exceptions import SizeMismatch, TooFew, UnenrolledSpeaker
from .supraseg import CSPHMMClassifier, _argmax_first, fuse

CRITICAL_T = 1.645
ALPHA_GRID = tuple(np.round(np.linspace(0.0, 1.0, 11), 10))
TABLE_COLUMNS = ("classifier", "environment", "gender", "accuracy", "correct", "total")


def _pct(correct, total):
    return 100.0 * correct / total if total else 0.0


# -- performance tables ----------------------------------------------------


@dataclass
class PerformanceTable:
    """Identification counts per (classifier, environment, speaker).

    Gender and average rows are derived from the per-speaker counts, so the
    average row is always ``sum(correct) / sum(total)`` over both genders.
    """

    counts: dict = field(default_factory=dict)
    genders: dict = field(default_factory=dict)

    def record(self, classifier, environment, speaker_id, gender, correct, total=1):
        key = (classifier, environment)
        per = self.counts.setdefault(key, {})
        c, t = per.get(speaker_id, (0, 0))
        per[speaker_id] = (c + int(correct), t + int(total))
        self.genders[speaker_id] = gender

    def cell(self, classifier, environment, gender="average"):
        per = self.counts.get((classifier, environment), {})
        pairs = [ct for spk, ct in per.items() if gender == "average" or self.genders[spk] == gender]
        correct = sum(c for c, _ in pairs)
        total = sum(t for _, t in pairs)
        return correct, total

    def accuracy(self, classifier, environment, gender="average"):
        return _pct(*self.cell(classifier, environment, gender))

    def rows(self):
        out = []
        for clf, env in self.counts:
            for gender in GENDERS + ("average",):
                correct, total = self.cell(clf, env, gender)
                if total == 0 and gender != "average":
                    continue
                out.append(
                    {
                        "classifier": clf,
                        "environment": env,
                        "gender": gender,
                        "accuracy": _pct(correct, total),
                        "correct": correct,
                        "total": total,
                    }
                )
        return out

    def per_speaker_accuracy(self, classifier, environment, speakers=None):
        per = self.counts[(classifier, environment)]
        speakers = list(per) if speakers is None else speakers
        return np.array([_pct(*per[s]) for s in speakers])


def _labels(records):
    return np.array([r.speaker_id for r in records])


def _check_enrolled(classifier, records):
    enrolled = set(map(str, classifier.classes_))
    missing = sorted({r.speaker_id for r in records} - enrolled)
    if missing:
        raise UnenrolledSpeaker(f"test speakers without a model: {missing}")


def run_experiment(classifiers, split, store, environments=("neutral", "shouted"), table=None):
    """Score every test utterance of ``split`` with every fitted classifier.

    ``classifiers`` maps a display name to a fitted estimator exposing
    ``classes_`` and ``predict``.  Returns a ``PerformanceTable``.
    """
    table = PerformanceTable() if table is None else table
    for env in environments:
        records = split.test(env)
        if not records:
            continue
        X = store.get(records)
        for name, clf in classifiers.items():
            _check_enrolled(clf, records)
            pred = clf.predict(X)
            for rec, p in zip(records, pred):
                table.record(name, env, rec.speaker_id, rec.gender, str(p) == rec.speaker_id)
    return table


# -- Student's t -----------------------------------------------------------


@dataclass(frozen=True)
class TTestResult:
    mean1: float
    mean2: float
    sd1: float
    sd2: float
    sd_pooled: float
    n: int
    t: float
    significant: bool
    critical: float = CRITICAL_T
    t_standard: float = float("nan")
    p_standard: float = float("nan")

    def as_dict(self):
        return dict(self.__dict__)


def t_test(sample1, sample2, critical=CRITICAL_T):
    """Compare two equal-size samples with ``t = (mean1 - mean2) / SD_pooled``.

    ``SD_pooled = sqrt((SD1^2 + SD2^2) / 2)`` with population standard
    deviations, and the result is significant iff ``t > critical``.  This
    statistic has no ``sqrt(2 / n)`` factor; the conventional equal-variance
    two-sample t and its two-sided p-value are reported separately as
    ``t_standard`` and ``p_standard``.
    """
    a = np.asarray(sample1, dtype=float).ravel()
    b = np.asarray(sample2, dtype=float).ravel()
    if len(a) != len(b):
        raise SizeMismatch(f"samples differ in size: {len(a)} vs {len(b)}")
    if len(a) < 2:
        raise TooFew(f"need at least 2 values per sample, got {len(a)}")
    m1, m2 = float(a.mean()), float(b.mean())
    sd1, sd2 = float(a.std()), float(b.std())
    pooled = float(np.sqrt((sd1 * sd1 + sd2 * sd2) / 2.0))
    diff = m1 - m2
    if pooled > 0:
        t = diff / pooled
    else:
        t = 0.0 if diff == 0 else float(np.copysign(np.inf, diff))
    with warnings.catch_warnings(), np.errstate(divide="ignore", invalid="ignore"):
        # constant samples make the conventional statistic undefined (NaN)
        warnings.simplefilter("ignore", RuntimeWarning)
        std = stats.ttest_ind(a, b, equal_var=True)
    return TTestResult(m1, m2, sd1, sd2, pooled, len(a), float(t), bool(t > critical), critical, float(std.statistic), float(std.pvalue))


# -- alpha sweep -----------------------------------------------------------


@dataclass
class AlphaSweepReport:
    alphas: tuple
    correct: dict
    totals: dict

    def accuracy(self, environment):
        return np.array([_pct(c, self.totals[environment]) for c in self.correct[environment]])

    def rows(self):
        envs = list(self.correct)
        return [
            {"alpha": a, **{env: _pct(self.correct[env][i], self.totals[env]) for env in envs}}
            for i, a in enumerate(self.alphas)
        ]


def alpha_sweep(classifier, split, store, alphas=ALPHA_GRID, environments=("neutral", "shouted")):
    """Identification accuracy at every ``alpha`` from one scoring pass.

    Acoustic and prosodic log-likelihoods are computed once per utterance and
    speaker, then fused for each grid point.
    """
    alphas = tuple(float(a) for a in alphas)
    if not alphas:
        raise ValueError("alpha grid is empty")
    correct, totals = {}, {}
    for env in environments:
        records = split.test(env)
        if not records:
            continue
        _check_enrolled(classifier, records)
        la, lp = classifier.score_components(store.get(records))
        y = _labels(records)
        correct[env] = []
        for a in alphas:
            scores = fuse(la, lp, a)
            pred = classifier.classes_[[_argmax_first(row) for row in scores]]
            correct[env].append(int(np.sum(pred == y)))
        totals[env] = len(records)
    return AlphaSweepReport(alphas, correct, totals)


# -- cross-validation ------------------------------------------------------


@dataclass
class CvReport:
    folds: dict

    def mean(self, classifier):
        return float(np.mean(self.folds[classifier]))

    def std(self, classifier):
        """Population standard deviation (divide by the number of folds)."""
        return float(np.std(self.folds[classifier]))

    def rows(self):
        out = []
        for clf, accs in self.folds.items():
            out += [{"classifier": clf, "fold": str(i + 1), "accuracy": a} for i, a in enumerate(accs)]
            out.append({"classifier": clf, "fold": "mean", "accuracy": self.mean(clf)})
            out.append({"classifier": clf, "fold": "std", "accuracy": self.std(clf)})
        return out


def cross_validate(manifest, store, classifiers, k=5, seed=0, train_fraction=1 / 3, n_jobs=1):
    """k-fold protocol: each random subset is split into train and test rows.

    ``classifiers`` maps names to unfitted estimators; each fold fits a clone.
    Fold accuracies are percentages, aggregated in fold order.
    """
    parts = cv_partition(manifest, k=k, train_fraction=train_fraction, seed=seed)

    def one(part):
        train, test = part
        X, y = store.get(train), _labels(train)
        Xt, yt = store.get(test), _labels(test)
        out = {}
        for name, est in classifiers.items():
            fitted = clone(est).fit(X, y)
            _check_enrolled(fitted, test)
            out[name] = 100.0 * float(np.mean(fitted.predict(Xt).astype(str) == yt))
        return out

    if n_jobs and n_jobs > 1:
        with ThreadPoolExecutor(n_jobs) as pool:
            results = list(pool.map(one, parts))
    else:
        results = [one(p) for p in parts]
    return CvReport({name: [r[name] for r in results] for name in classifiers})


# -- reports ---------------------------------------------------------------


def default_metadata(seed=None, config_hash=""):
    return {"artifact_version": __version__, "config_hash": config_hash, "seed": seed}


def _fmt(value):
    return f"{value:.1f}" if isinstance(value, float) else str(value)


def _report_rows(report):
    if isinstance(report, PerformanceTable):
        return list(TABLE_COLUMNS), report.rows()
    if isinstance(report, AlphaSweepReport):
        return ["alpha"] + list(report.correct), report.rows()
    if isinstance(report, CvReport):
        return ["classifier", "fold", "accuracy"], report.rows()
    if isinstance(report, TTestResult):
        d = report.as_dict()
        return list(d), [d]
    raise TypeError(f"cannot emit {type(report).__name__}")


def report_to_csv(report, metadata=None):
    """CSV text: ``# key=value`` metadata lines, a header, then rows.

    Percentages and other reals are printed with one decimal; t-test rows keep
    full precision since their values are not percentages.
    """
    columns, rows = _report_rows(report)
    buf = io.StringIO()
    for key, value in (metadata or {}).items():
        buf.write(f"# {key}={'' if value is None else value}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    full = isinstance(report, TTestResult)
    for row in rows:
        w.writerow([repr(row[c]) if full and isinstance(row[c], float) else _fmt(row[c]) for c in columns])
    return buf.getvalue()


def _json_default(obj):
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(type(obj).__name__)


def report_to_json(report, metadata=None):
    columns, rows = _report_rows(report)
    payload = {"metadata": metadata or {}, "columns": columns, "rows": rows}
    if isinstance(report, PerformanceTable):
        payload["per_speaker"] = [
            {"classifier": clf, "environment": env, "speaker_id": spk, "gender": report.genders[spk], "correct": c, "total": t}
            for (clf, env), per in report.counts.items()
            for spk, (c, t) in per.items()
        ]
    return json.dumps(payload, indent=1, sort_keys=False, default=_json_default) + "\n"


def emit_report(report, path, fmt="csv", metadata=None):
    if fmt not in ("csv", "json"):
        raise ValueError("format must be 'csv' or 'json'")
    text = report_to_csv(report, metadata) if fmt == "csv" else report_to_json(report, metadata)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)
    return path


def parse_table_csv(text):
    """Inverse of ``report_to_csv`` for performance tables.

    Returns ``(rows, metadata)`` with ``rows`` as dicts carrying integer
    counts; ``table_csv_from_rows`` re-emits the same bytes.
    """
    metadata, body = {}, []
    for line in text.splitlines():
        if line.startswith("# "):
            key, _, value = line[2:].partition("=")
            metadata[key] = value
        else:
            body.append(line)
    reader = csv.DictReader(body)
    rows = []
    for r in reader:
        rows.append({**r, "correct": int(r["correct"]), "total": int(r["total"])})
    return rows, metadata


def table_csv_from_rows(rows, metadata=None):
    buf = io.StringIO()
    for key, value in (metadata or {}).items():
        buf.write(f"# {key}={value}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(TABLE_COLUMNS)
    for r in rows:
        w.writerow([r["classifier"], r["environment"], r["gender"], f"{_pct(r['correct'], r['total']):.1f}", r["correct"], r["total"]])
    return buf.getvalue()


def csphmm_for_alpha(classifier, alpha):
    """A copy of a fitted ``CSPHMMClassifier`` with another fusion weight."""
    if not isinstance(classifier, CSPHMMClassifier):
        raise TypeError("expected a CSPHMMClassifier")
    return CSPHMMClassifier.from_models(classifier.models_, **{**classifier.get_params(), "alpha": alpha})
