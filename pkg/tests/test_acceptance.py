"""Acceptance criteria 1-12.

Every test records one ``CRITERION n: PASS|FAIL ...`` line; the lines are
printed in the terminal summary (see ``conftest.py``) and asserted at the
stated tolerances.  The synthetic identification suite (criteria 6-8) is
trained once per seed and shared.
"""

import json
import time
from dataclasses import dataclass, field

import numpy as np
import pytest
from scipy.signal import sawtooth
from scipy.stats import binom, binomtest, t as student_t

from csphmm.baselines import GMMClassifier, VQClassifier, train_gmm
from csphmm.cli import main
from csphmm.corpus import CorpusManifest, UtteranceRecord, cv_partition, standard_split
from csphmm.evaluation import cross_validate, t_test
from csphmm.frontend import FrameSpec, Waveform, deltas, filterbank_energies, frame, mel_centers, prosody
from csphmm.hmm import (
    baum_welch,
    bootstrap_order,
    brute_force_loglik,
    brute_force_viterbi,
    init_from_data,
    log_forward,
    model_from_dict,
    model_to_dict,
    random_hmm,
    sample,
    viterbi,
)
from csphmm.hmm.io import dumps
from csphmm.supraseg import CSPHMMClassifier, FusionConfig, ModelConfig, fuse, fused_score, score_components, train_speaker_orders
from csphmm.synth import SynthConfig, synth_corpus

ACCEPTANCE_LINES = []
N_SEEDS = 20
SUITE_REPS = 4


def report(n, ok, detail):
    line = f"CRITERION {n:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


# -- shared synthetic identification suite ---------------------------------


@dataclass
class SuiteResult:
    # accuracy[name][env] -> list over seeds (fraction correct)
    accuracy: dict = field(default_factory=dict)
    csphmm_seconds: float = 0.0
    chance_correct: int = 0
    chance_trials: int = 0

    def add(self, name, env, value):
        self.accuracy.setdefault(name, {}).setdefault(env, []).append(value)

    def mean(self, name, env):
        return float(np.mean(self.accuracy[name][env]))


def _csphmm_models(split, store):
    X = store.get(split.train)
    y = np.array([r.speaker_id for r in split.train])
    models = {1: [], 3: []}
    for spk in sorted(split.speakers):
        trained = train_speaker_orders([u for u, lab in zip(X, y) if lab == spk], (1, 3), ModelConfig(), spk)
        for r in models:
            models[r].append(trained[r])
    return {r: CSPHMMClassifier.from_models(m) for r, m in models.items()}, X, y


def _accuracy(clf, split, store, env):
    recs = split.test(env)
    truth = np.array([r.speaker_id for r in recs])
    return float(np.mean(clf.predict(store.get(recs)) == truth))


@pytest.fixture(scope="module")
def suite():
    res = SuiteResult()
    for seed in range(N_SEEDS):
        manifest, _, store = synth_corpus(SynthConfig(n_speakers=10, n_reps=SUITE_REPS, separation=3.0, seed=seed))
        split = standard_split(manifest)
        t0 = time.perf_counter()
        clfs, X, y = _csphmm_models(split, store)
        for r, clf in clfs.items():
            res.add(f"CSPHMM{r}", "neutral", _accuracy(clf, split, store, "neutral"))
        res.csphmm_seconds += time.perf_counter() - t0
        for r, clf in clfs.items():
            res.add(f"CSPHMM{r}", "shouted", _accuracy(clf, split, store, "shouted"))
        for name, est in (("GMM", GMMClassifier(random_state=seed)), ("VQ", VQClassifier(random_state=seed))):
            est.fit(X, y)
            for env in ("neutral", "shouted"):
                res.add(name, env, _accuracy(est, split, store, env))

        manifest0, _, store0 = synth_corpus(SynthConfig(n_speakers=10, n_reps=SUITE_REPS, separation=0.0, seed=1000 + seed))
        split0 = standard_split(manifest0)
        t0 = time.perf_counter()
        clfs0, _, _ = _csphmm_models(split0, store0)
        acc = _accuracy(clfs0[3], split0, store0, "neutral")
        res.csphmm_seconds += time.perf_counter() - t0
        n = len(split0.test("neutral"))
        res.chance_correct += int(round(acc * n))
        res.chance_trials += n
    return res


# -- criteria --------------------------------------------------------------


def test_criterion_01_oracle_equivalence():
    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)
    worst, path_mismatch, n = 0.0, 0, 0
    for _ in range(120):
        N, r, T = int(rng.integers(1, 4)), int(rng.integers(1, 4)), int(rng.integers(1, 7))
        hmm = random_hmm(N, r, 2, n_mix=2, rng=rng)
        obs = rng.normal(size=(T, 2))
        fwd, ref = log_forward(hmm, obs), brute_force_loglik(hmm, obs)
        worst = max(worst, abs(fwd - ref) - (1e-9 * abs(ref) + 1e-12))
        path, score = viterbi(hmm, obs)
        bpath, bscore = brute_force_viterbi(hmm, obs)
        path_mismatch += not np.array_equal(path, bpath)
        n += 1
    elapsed = time.perf_counter() - t0
    ok = worst <= 0 and path_mismatch == 0 and elapsed < 30
    assert report(1, ok, f"{n} instances, max excess error {max(worst, 0.0):.1e}, viterbi mismatches {path_mismatch}, {elapsed:.1f}s")


def test_criterion_02_normalization_invariants():
    rng = np.random.default_rng(7)
    checked = 0
    failures = []
    for seed in range(5):
        truth = random_hmm(3, 1, 2, n_mix=2, rng=seed, mean_scale=3.0)
        data = [sample(truth, 60, seed=100 * seed + i)[0] for i in range(4)]
        model = init_from_data(data, 3, 2, rng=seed)
        for r in (1, 2, 3):
            if r > 1:
                model = bootstrap_order(model)
            for _ in range(20):
                try:
                    model.check_invariants()
                except AssertionError as exc:
                    failures.append(f"order {r}: {exc}")
                checked += 1
                model, _ = baum_welch(model, data, max_iters=1, rel_tol=0.0)
            model.check_invariants()
        for r in (1, 2, 3):
            random_hmm(int(rng.integers(1, 10)), r, 3, rng=rng).check_invariants()
            checked += 1
    ok = not failures
    assert report(2, ok, f"{checked} models checked (construction, bootstrap, every EM iteration); failures {len(failures)}")


def test_criterion_03_em_monotonicity():
    worst = np.inf
    for seed in range(10):
        truth = random_hmm(3, 1, 2, n_mix=2, rng=seed, mean_scale=2.0)
        data = [sample(truth, 50, seed=seed * 10 + i)[0] for i in range(5)]
        model = init_from_data(data, 3, 2, rng=seed)
        for r in (1, 2, 3):
            if r > 1:
                model = bootstrap_order(model)
            model, trace = baum_welch(model, data, max_iters=20, rel_tol=0.0)
            worst = min(worst, float(np.min(np.diff(trace))))
        frames = np.random.default_rng(seed).normal(size=(600, 3)) * [1.0, 2.0, 0.5]
        _, gtrace = train_gmm(frames, n_components=8, seed=seed, max_iter=20, tol=0.0)
        worst = min(worst, float(np.min(np.diff(gtrace))))
    ok = worst >= -1e-8
    assert report(3, ok, f"10 seeds x 20 iterations (CHMM orders 1-3 and GMM); smallest step {worst:+.2e}")


def test_criterion_04_bootstrap_fidelity():
    rng = np.random.default_rng(11)
    worst = 0.0
    for r in (1, 2):
        src = random_hmm(4, r, 3, n_mix=2, rng=rng)
        boot = bootstrap_order(src)
        for _ in range(20):
            obs = rng.normal(size=(int(rng.integers(1, 40)), 3))
            worst = max(worst, abs(log_forward(boot, obs) - log_forward(src, obs)))
    ok = worst <= 1e-10
    assert report(4, ok, f"orders 1->2 and 2->3 on 20 sequences each; max |diff| {worst:.1e}")


def test_criterion_05_fusion_contract(small_corpus):
    _, _, store, split = small_corpus
    utts = [store[r] for r in split.train if r.speaker_id == split.speakers[0]]
    model = train_speaker_orders(utts, (2,), ModelConfig(max_iter=5))[2]
    bad = 0
    for rec in split.test_neutral[:5] + split.test_shouted[:5]:
        utt = store[rec]
        la, lp = score_components(model, utt)
        s0 = fused_score(model, utt, FusionConfig(0.0))
        s1 = fused_score(model, utt, FusionConfig(1.0))
        bad += s0 != la or s1 != lp
        for a in np.round(np.linspace(0.0, 1.0, 11), 10):
            bad += fused_score(model, utt, FusionConfig(a)) != (1 - a) * s0 + a * s1
    bad += fuse(-10.0, -20.0, 0.5) != -15.0
    assert report(5, bad == 0, f"10 utterances x 11 alpha points, exact equality; violations {bad}")


@pytest.mark.slow
def test_criterion_06_synthetic_identification(suite):
    acc3 = suite.mean("CSPHMM3", "neutral")
    acc1 = suite.mean("CSPHMM1", "neutral")
    n, k = suite.chance_trials, suite.chance_correct
    lo, hi = binom.ppf(0.005, n, 0.1) / n, binom.ppf(0.995, n, 0.1) / n
    chance = k / n
    ok = acc3 >= 0.95 and lo <= chance <= hi and suite.csphmm_seconds < 300
    detail = (
        f"neutral CSPHMM3 {100 * acc3:.1f}% (CSPHMM1 {100 * acc1:.1f}%) over {N_SEEDS} seeds; "
        f"separation 0: {100 * chance:.1f}% of {n} trials, 99% band [{100 * lo:.1f}, {100 * hi:.1f}]; "
        f"CSPHMM train+score {suite.csphmm_seconds:.0f}s"
    )
    assert report(6, ok, detail)


@pytest.mark.slow
def test_criterion_07_mismatch_trend(suite):
    parts, ok = [], True
    for name in ("CSPHMM1", "CSPHMM3", "GMM", "VQ"):
        neu, sh = np.array(suite.accuracy[name]["neutral"]), np.array(suite.accuracy[name]["shouted"])
        wins = int(np.sum(sh < neu))
        ties = int(np.sum(sh == neu))
        p = binomtest(wins, N_SEEDS - ties, 0.5, alternative="greater").pvalue if N_SEEDS > ties else 1.0
        ok &= bool(sh.mean() < neu.mean() and p < 0.05)
        parts.append(f"{name} {100 * neu.mean():.1f}->{100 * sh.mean():.1f} (sign p={p:.1e})")
    assert report(7, ok, "; ".join(parts))


@pytest.mark.slow
def test_criterion_08_order_trend(suite):
    a3 = np.array(suite.accuracy["CSPHMM3"]["shouted"])
    a1 = np.array(suite.accuracy["CSPHMM1"]["shouted"])
    d = 100 * (a3 - a1)
    half = student_t.ppf(0.975, len(d) - 1) * d.std(ddof=1) / np.sqrt(len(d)) if d.std() > 0 else 0.0
    ok = a3.mean() >= a1.mean()
    detail = (
        f"shouted CSPHMM3 {100 * a3.mean():.2f}% vs CSPHMM1 {100 * a1.mean():.2f}%; "
        f"difference {d.mean():+.2f} pts, 95% CI [{d.mean() - half:+.2f}, {d.mean() + half:+.2f}]"
    )
    assert report(8, ok, detail)


def test_criterion_09_t_test_arithmetic():
    ok = t_test([0.5, 0.7, 0.9], [0.5, 0.7, 0.9]).t == 0.0
    r = t_test([0.55, 0.65] * 5, [0.45, 0.55] * 5)
    ok &= abs(r.sd_pooled - 0.05) < 1e-12 and abs(r.t - 2.0) < 1e-12 and r.significant
    rng = np.random.default_rng(9)
    sym = scale = 0
    for _ in range(100):
        a, b = rng.uniform(0, 100, size=(2, 50))
        t = t_test(a, b).t
        sym += t_test(b, a).t != -t
        c = rng.uniform(0.01, 100)
        scale += not np.isclose(t_test(c * a, c * b).t, t, rtol=1e-10, atol=1e-12)
    thr = t_test([1.882 + 1, 1.882 - 1], [1.0, -1.0])
    ok &= sym == 0 and scale == 0 and thr.significant and abs(thr.t - 1.882) < 1e-12
    assert report(9, bool(ok), f"hand cases exact; antisymmetry violations {sym}/100; scale violations {scale}/100; t=1.882 significant={thr.significant}")


def test_criterion_10_front_end():
    static = np.tile(np.random.default_rng(0).normal(size=16), (9, 1))
    zero_deltas = bool(np.all(deltas(static) == 0.0))
    n_frames = len(frame(Waveform(np.zeros(12000), 12000), FrameSpec()))
    t = np.arange(240) / 12000
    tone = 0.5 * np.sin(2 * np.pi * 1000.0 * t) * np.hamming(240)
    peak = int(np.argmax(filterbank_energies(tone[None], 12000)[0]))
    nearest = int(np.argmin(np.abs(mel_centers(24, 0.0, 6000.0) - 1000.0)))
    ts = np.arange(12000) / 12000
    saw = frame(Waveform(0.5 * sawtooth(2 * np.pi * 200.0 * ts), 12000))
    f0 = prosody(saw, 12000).f0
    f0_err = float(np.max(np.abs(f0 - 200.0)))
    ok = zero_deltas and n_frames == 72 and peak == nearest and f0_err <= 5.0
    assert report(10, ok, f"constant deltas zero={zero_deltas}; frames={n_frames}; mel peak filter {peak} (nearest {nearest}); max F0 error {f0_err:.2f} Hz")


def test_criterion_11_determinism_and_persistence(tmp_path):
    assert main(["--seed", "5", "synth", str(tmp_path / "c"), "--speakers", "3", "--reps", "2", "--min-len", "30", "--max-len", "50"]) == 0
    (tmp_path / "run.cfg").write_text("max_iter = 4\ngmm_components = 4\nvq_codewords = 8\n")
    manifest = str(tmp_path / "c" / "manifest.csv")
    for run, threads in (("a", "1"), ("b", "3")):
        base = ["--config", str(tmp_path / "run.cfg"), "--threads", threads, "--model-dir", str(tmp_path / run / "m"), "--report-dir", str(tmp_path / run / "r")]
        assert main([*base, "train", manifest, "--orders", "1,2,3"]) == 0
        assert main([*base, "evaluate", manifest, "--orders", "1,2,3"]) == 0
        assert main([*base, "alpha-sweep", manifest]) == 0
        assert main([*base, "--order", "1", "crossval", manifest]) == 0
    differing, files = [], 0
    for sub in ("m", "r"):
        for p in sorted((tmp_path / "a" / sub).iterdir()):
            files += 1
            if p.read_bytes() != (tmp_path / "b" / sub / p.name).read_bytes():
                differing.append(p.name)
    lossless = True
    for p in (tmp_path / "a" / "m").glob("*.json"):
        payload = json.loads(p.read_text())
        for key in ("acoustic", "prosodic"):
            m = model_from_dict(payload[key])
            lossless &= dumps(model_to_dict(m)) == dumps(payload[key])
            back = model_from_dict(json.loads(dumps(model_to_dict(m))))
            lossless &= all(np.array_equal(getattr(m, f), getattr(back, f)) for f in ("pi", "transitions", "means", "variances", "weights"))
    ok = not differing and lossless and files > 0
    assert report(11, ok, f"{files} model/report files byte-identical across --threads 1/3: {not differing}; serialization lossless: {lossless}")


def test_criterion_12_cross_validation_protocol():
    recs = []
    for v in range(50):
        for sent in range(1, 9):
            for rep in range(1, 10):
                for env in ("neutral",) if sent <= 4 else ("neutral", "shouted"):
                    recs.append(UtteranceRecord(f"s{v:02d}", "male", sent, rep, env, "features", f"{v}_{sent}_{rep}_{env}.ssf"))
    parts = cv_partition(CorpusManifest(tuple(recs)), k=5, train_fraction=1 / 3, seed=0)
    sizes = [(len(tr) + len(te), len(tr), len(te)) for tr, te in parts]
    counts_ok = sizes == [(1080, 360, 720)] * 5
    manifest, _, store = synth_corpus(SynthConfig(n_speakers=10, n_reps=9, separation=3.0, seed=0))
    rep = cross_validate(manifest, store, {"CSPHMM3": CSPHMMClassifier(order=3)}, k=5, seed=0)
    std = rep.std("CSPHMM3")
    ok = counts_ok and std < 5.0
    assert report(12, ok, f"5400 records -> subsets {sizes[0]} x5: {counts_ok}; synthetic CSPHMM3 CV mean {rep.mean('CSPHMM3'):.1f}% std {std:.2f} pts")
