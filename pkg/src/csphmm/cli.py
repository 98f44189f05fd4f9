"""Command-line interface.

Exit codes: 0 on success, 1 for usage errors, 2 for data or model errors.
"""

import json
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import click
import numpy as np

from . import __version__
from .baselines import GMMClassifier, VQClassifier
from .config import config_hash, load_config, training_hash
from .corpus import CorpusManifest, FeatureStore, UtteranceRecord, read_utterance, standard_split, write_manifest, write_utterance
from .evaluation import alpha_sweep, cross_validate, default_metadata, emit_report, run_experiment, t_test
from .exceptions import CsphmmError
from .frontend import read_wav
from .supraseg import (
    CSPHMMClassifier,
    fuse,
    load_speaker,
    save_speaker,
    score_components,
    train_speaker_from_acoustic,
    train_speaker_orders,
)
from .synth import SynthConfig, synth_corpus


class DataError(CsphmmError):
    """Missing or unusable data or models (exit code 2)."""


def _map(threads, fn, items):
    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            return list(pool.map(fn, items))
    return [fn(i) for i in items]


def _parse_orders(text, default):
    if text is None:
        return [default]
    try:
        orders = sorted({int(x) for x in text.split(",") if x.strip()})
    except ValueError:
        raise click.BadParameter(f"expected comma-separated orders, got {text!r}", param_hint="--orders") from None
    if not orders or any(o not in (1, 2, 3) for o in orders):
        raise click.BadParameter("orders must be drawn from 1, 2, 3", param_hint="--orders")
    return orders


def model_path(model_dir, speaker_id, order):
    return Path(model_dir) / f"{speaker_id}.order{order}.json"


def _metadata(cfg, command):
    meta = default_metadata(cfg.seed, config_hash(cfg))
    meta["command"] = command
    return meta


def _emit(report, cfg, name, command):
    out = Path(cfg.report_dir)
    out.mkdir(parents=True, exist_ok=True)
    meta = _metadata(cfg, command)
    emit_report(report, out / f"{name}.csv", "csv", meta)
    emit_report(report, out / f"{name}.json", "json", meta)
    return out / f"{name}.csv"


def _load_split(cfg, manifest_path):
    from .corpus import load_manifest

    manifest = load_manifest(manifest_path)
    return manifest, standard_split(manifest), FeatureStore(manifest, cfg.extractor())


def _load_models(cfg, speakers, order):
    models = []
    for spk in speakers:
        path = model_path(cfg.model_dir, spk, order)
        if not path.exists():
            raise DataError(f"missing model {path}; run 'csphmm train' first")
        models.append(load_speaker(path))
    return models


def _classifier(cfg, models=None):
    params = dict(
        order=cfg.order,
        n_states=cfg.n_states,
        n_mix=cfg.n_mix,
        prosodic_mix=cfg.prosodic_mix,
        block=cfg.block,
        alpha=cfg.alpha,
        normalization=cfg.normalization,
        max_iter=cfg.max_iter,
        tol=cfg.tol,
        prosodic_floor=cfg.prosodic_floor,
        random_state=cfg.seed,
        n_jobs=cfg.threads,
    )
    if models is None:
        return CSPHMMClassifier(**params)
    return CSPHMMClassifier.from_models(models, **params)


def _baselines(cfg):
    return {
        "GMM": GMMClassifier(n_components=cfg.gmm_components, random_state=cfg.seed),
        "VQ": VQClassifier(n_codewords=cfg.vq_codewords, random_state=cfg.seed),
    }


# -- command group ---------------------------------------------------------


@click.group()
@click.version_option(__version__, prog_name="csphmm")
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False), help="key = value configuration file.")
@click.option("--seed", type=int, help="Random seed.")
@click.option("--threads", type=click.IntRange(min=1), help="Worker threads (results do not depend on it).")
@click.option("--order", type=click.Choice(["1", "2", "3"]), help="Model order.")
@click.option("--alpha", type=click.FloatRange(0.0, 1.0), help="Acoustic/prosodic weighting factor.")
@click.option("--report-dir", type=click.Path(file_okay=False), help="Directory for reports.")
@click.option("--model-dir", type=click.Path(file_okay=False), help="Directory for speaker models.")
@click.pass_context
def cli(ctx, config_path, seed, threads, order, alpha, report_dir, model_dir):
    """Speaker identification with circular suprasegmental HMMs."""
    try:
        ctx.obj = load_config(
            config_path,
            seed=seed,
            threads=threads,
            order=int(order) if order else None,
            alpha=alpha,
            report_dir=report_dir,
            model_dir=model_dir,
        )
    except (ValueError, TypeError) as exc:
        raise click.UsageError(f"bad configuration: {exc}") from exc


@cli.command()
@click.argument("out_dir", type=click.Path(file_okay=False))
@click.option("--speakers", default=10, show_default=True, type=click.IntRange(min=2))
@click.option("--sentences", default=8, show_default=True, type=click.IntRange(5, 8))
@click.option("--reps", default=9, show_default=True, type=click.IntRange(1, 9))
@click.option("--separation", default=3.0, show_default=True, type=click.FloatRange(min=0.0))
@click.option("--min-len", default=60, show_default=True, type=click.IntRange(min=1))
@click.option("--max-len", default=120, show_default=True, type=click.IntRange(min=1))
@click.pass_obj
def synth(cfg, out_dir, speakers, sentences, reps, separation, min_len, max_len):
    """Write a synthetic corpus (features, manifest, ground truth) to OUT_DIR."""
    try:
        sc = SynthConfig(
            n_speakers=speakers,
            n_sentences=sentences,
            n_reps=reps,
            min_len=min_len,
            max_len=max_len,
            separation=separation,
            seed=cfg.seed,
        )
    except ValueError as exc:
        raise click.UsageError(str(exc)) from exc
    manifest, _, _ = synth_corpus(sc, out_dir)
    click.echo(f"wrote {len(manifest)} utterances for {len(manifest.speakers)} speakers to {out_dir}")


@cli.command()
@click.argument("manifest", type=click.Path(exists=True, dir_okay=False))
@click.argument("out_dir", type=click.Path(file_okay=False))
@click.pass_obj
def features(cfg, manifest, out_dir):
    """Extract SSF1 feature files for every audio record of MANIFEST."""
    from .corpus import load_manifest

    man = load_manifest(manifest)
    audio = [r for r in man if r.source_kind == "audio"]
    if not audio:
        click.echo("manifest already references feature files; nothing to do")
        return
    out = Path(out_dir)
    (out / "features").mkdir(parents=True, exist_ok=True)
    extractor = cfg.extractor()

    def one(rec):
        rel = f"features/{rec.speaker_id}_s{rec.sentence_id}_r{rec.repetition}_{rec.environment}.mfcc.ssf"
        try:
            utt = extractor.extract(read_wav(man.resolve(rec.source_path)))
            write_utterance(out / rel, utt)
        except (CsphmmError, OSError, ValueError) as exc:
            return None, f"{rec.source_path}: {exc}"
        return UtteranceRecord(rec.speaker_id, rec.gender, rec.sentence_id, rec.repetition, rec.environment, "features", rel), None

    results = _map(cfg.threads, one, audio)
    records, errors = [], []
    done = iter(results)
    for rec in man:
        if rec.source_kind == "audio":
            new, err = next(done)
            if err:
                errors.append(err)
            else:
                records.append(new)
        else:
            # existing feature records keep pointing at their files
            records.append(
                UtteranceRecord(
                    rec.speaker_id,
                    rec.gender,
                    rec.sentence_id,
                    rec.repetition,
                    rec.environment,
                    "features",
                    str(man.resolve(rec.source_path).resolve()),
                )
            )
    write_manifest(CorpusManifest(tuple(records), out), out / "manifest.csv")
    click.echo(f"extracted {len(audio) - len(errors)} of {len(audio)} audio records into {out}")
    if errors:
        click.echo(f"{len(errors)} file(s) failed:", err=True)
        for e in errors:
            click.echo(f"  {e}", err=True)
        raise DataError(f"{len(errors)} feature extraction failure(s)")


def _train_one(cfg, utts, spk, orders, thash):
    """Models for every requested order, reusing a cached lower order when valid."""
    mcfg = cfg.model_config()
    lowest = min(orders)
    cached = None
    for c in range(lowest - 1, 0, -1):
        path = model_path(cfg.model_dir, spk, c)
        if path.exists():
            try:
                m = load_speaker(path)
            except (CsphmmError, ValueError, KeyError, OSError):
                continue
            if m.config_hash == thash and m.order == c:
                cached = m
                break
    if cached is None:
        return train_speaker_orders(utts, orders, mcfg, spk, cfg.alpha, thash)
    out, acoustic = {}, cached.acoustic
    for r in range(cached.order + 1, max(orders) + 1):
        model, acoustic = train_speaker_from_acoustic(acoustic, utts, mcfg, spk, cfg.alpha, thash)
        if r in orders:
            out[r] = model
    return out


@cli.command()
@click.argument("manifest", type=click.Path(exists=True, dir_okay=False))
@click.option("--orders", default=None, help="Comma-separated orders to train (default: the global --order).")
@click.pass_obj
def train(cfg, manifest, orders):
    """Train one speaker model per (speaker, order) from neutral sentences 1-4."""
    orders = _parse_orders(orders, cfg.order)
    _, split, store = _load_split(cfg, manifest)
    thash = training_hash(cfg)
    Path(cfg.model_dir).mkdir(parents=True, exist_ok=True)
    speakers = sorted(split.speakers)

    def one(spk):
        utts = store.get([r for r in split.train if r.speaker_id == spk])
        return spk, _train_one(cfg, utts, spk, orders, thash)

    # feature loading is not thread-safe in the store; warm it first
    store.get(split.train)
    for spk, models in _map(cfg.threads, one, speakers):
        for r, m in models.items():
            save_speaker(m, model_path(cfg.model_dir, spk, r))
    click.echo(f"trained {len(speakers)} speakers x orders {orders} into {cfg.model_dir}")


def _read_input(cfg, path):
    p = Path(path)
    if p.suffix.lower() == ".wav":
        return cfg.extractor().extract(read_wav(p))
    return read_utterance(p)


@cli.command()
@click.argument("utterance", type=click.Path(exists=True, dir_okay=False))
@click.pass_obj
def identify(cfg, utterance):
    """Identify the speaker of one utterance (WAV or .mfcc.ssf feature file)."""
    paths = sorted(Path(cfg.model_dir).glob(f"*.order{cfg.order}.json")) if Path(cfg.model_dir).is_dir() else []
    if not paths:
        raise DataError(f"no order-{cfg.order} models in {cfg.model_dir}")
    models = [load_speaker(p) for p in paths]
    utt = _read_input(cfg, utterance)
    scores = {}
    fused = []
    for m in models:
        la, lp = score_components(m, utt, cfg.normalization)
        f = fuse(la, lp, cfg.alpha)
        fused.append(f)
        scores[m.speaker_id] = {"fused": f, "acoustic": la, "prosodic": lp}
    fused = np.where(np.isnan(fused), -np.inf, fused)
    winner = models[int(np.argmax(fused))].speaker_id
    result = {
        "winner": winner,
        "order": cfg.order,
        "alpha": cfg.alpha,
        "normalization": cfg.normalization,
        "config_hash": config_hash(cfg),
        "scores": scores,
    }
    click.echo(json.dumps(result, indent=1))


@cli.command()
@click.argument("manifest", type=click.Path(exists=True, dir_okay=False))
@click.option("--orders", default=None, help="Comma-separated model orders to evaluate (default: the global --order).")
@click.option("--baselines/--no-baselines", default=True, show_default=True, help="Also train and score GMM and VQ.")
@click.pass_obj
def evaluate(cfg, manifest, orders, baselines):
    """Identification performance on the neutral and shouted test sets."""
    orders = _parse_orders(orders, cfg.order)
    _, split, store = _load_split(cfg, manifest)
    speakers = sorted(split.speakers)
    classifiers = {f"CSPHMM{r}": _classifier(cfg, _load_models(cfg, speakers, r)) for r in orders}
    if baselines:
        X, y = store.get(split.train), [r.speaker_id for r in split.train]
        for name, est in _baselines(cfg).items():
            classifiers[name] = est.fit(X, y)
    table = run_experiment(classifiers, split, store)
    path = _emit(table, cfg, "performance", "evaluate")
    out = Path(cfg.report_dir)
    for (name, env), per in table.counts.items():
        spks = sorted(per)
        acc = table.per_speaker_accuracy(name, env, spks)
        (out / f"accuracy_{name}_{env}.txt").write_text("".join(f"{float(a)!r}\n" for a in acc), encoding="utf-8")
    for row in table.rows():
        if row["gender"] == "average":
            click.echo(f"{row['classifier']:>8} {row['environment']:<8} {row['accuracy']:5.1f}% ({row['correct']}/{row['total']})")
    click.echo(f"report: {path}")


def _read_values(path):
    values = []
    with open(path, encoding="utf-8") as fh:
        lines = [ln.strip() for ln in fh if ln.strip() and not ln.startswith("#")]
    if lines and "," in lines[0]:
        header = lines[0].split(",")
        if "accuracy" not in header:
            raise DataError(f"{path}: CSV input needs an 'accuracy' column")
        col = header.index("accuracy")
        lines = [ln.split(",")[col] for ln in lines[1:]]
    for ln in lines:
        try:
            values.append(float(ln))
        except ValueError:
            raise DataError(f"{path}: not a number: {ln!r}") from None
    return values


@cli.command()
@click.argument("sample1", type=click.Path(exists=True, dir_okay=False))
@click.argument("sample2", type=click.Path(exists=True, dir_okay=False))
@click.pass_obj
def ttest(cfg, sample1, sample2):
    """Compare two per-speaker accuracy files (one value per line)."""
    res = t_test(_read_values(sample1), _read_values(sample2))
    _emit(res, cfg, "ttest", "ttest")
    click.echo(json.dumps(res.as_dict(), indent=1))


@cli.command()
@click.argument("manifest", type=click.Path(exists=True, dir_okay=False))
@click.option("--baselines/--no-baselines", default=True, show_default=True)
@click.pass_obj
def crossval(cfg, manifest, baselines):
    """k-fold cross-validation over the whole manifest."""
    from .corpus import load_manifest

    man = load_manifest(manifest)
    store = FeatureStore(man, cfg.extractor())
    store.get(man.records)
    classifiers = {f"CSPHMM{cfg.order}": _classifier(cfg)}
    if baselines:
        classifiers.update(_baselines(cfg))
    report = cross_validate(man, store, classifiers, k=cfg.cv_folds, seed=cfg.seed, train_fraction=cfg.cv_train_fraction, n_jobs=cfg.threads)
    path = _emit(report, cfg, "crossval", "crossval")
    for name in classifiers:
        click.echo(f"{name:>8} mean {report.mean(name):5.1f}%  std {report.std(name):4.1f}")
    click.echo(f"report: {path}")


@cli.command("alpha-sweep")
@click.argument("manifest", type=click.Path(exists=True, dir_okay=False))
@click.pass_obj
def alpha_sweep_cmd(cfg, manifest):
    """Accuracy for alpha = 0.0, 0.1, ..., 1.0 without retraining."""
    _, split, store = _load_split(cfg, manifest)
    clf = _classifier(cfg, _load_models(cfg, sorted(split.speakers), cfg.order))
    report = alpha_sweep(clf, split, store)
    path = _emit(report, cfg, "alpha_sweep", "alpha-sweep")
    for row in report.rows():
        click.echo("  ".join(f"{k}={v:.1f}" for k, v in row.items()))
    click.echo(f"report: {path}")


def main(argv=None):
    """Console entry point returning the process exit code."""
    try:
        rv = cli.main(args=argv, prog_name="csphmm", standalone_mode=False)
    except click.exceptions.Abort:
        click.echo("aborted", err=True)
        return 1
    except click.ClickException as exc:
        exc.show()
        return 1
    except (CsphmmError, OSError, ValueError, KeyError) as exc:
        click.echo(f"error: {exc}", err=True)
        return 2
    return rv if isinstance(rv, int) else 0


if __name__ == "__main__":
    sys.exit(main())
