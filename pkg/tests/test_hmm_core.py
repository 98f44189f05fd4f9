from itertools import product

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from csphmm.exceptions import BadOrder, DimensionMismatch, EmptyDataset, TooLarge
from csphmm.hmm import (
    CircularHMM,
    CircularHmm,
    baum_welch,
    bootstrap_order,
    brute_force_loglik,
    brute_force_viterbi,
    chain_log_prob,
    circular_mask,
    init_from_data,
    load_model,
    log_forward,
    model_from_dict,
    model_to_dict,
    order_reduce,
    random_hmm,
    sample,
    save_model,
    train_chain,
    viterbi,
)
from csphmm.hmm.io import dumps
from csphmm.hmm.model import PAD
from csphmm.hmm.sampling import sample_path


def _single_state(dim=1, mean=0.0, var=1.0):
    return CircularHmm(
        pi=np.array([1.0]),
        transitions=np.array([[1.0]]),
        weights=np.array([[1.0]]),
        means=np.full((1, 1, dim), mean),
        variances=np.full((1, 1, dim), var),
        mask=circular_mask(1),
    )


class TestTopology:
    def test_circular_mask_allows_self_and_next(self):
        m = circular_mask(4)
        expected = np.zeros((4, 4), dtype=bool)
        for i in range(4):
            expected[i, i] = expected[i, (i + 1) % 4] = True
        np.testing.assert_array_equal(m, expected)

    def test_random_model_satisfies_invariants(self, rng):
        for order in (1, 2, 3):
            hmm = random_hmm(4, order, 2, n_mix=2, rng=rng)
            assert hmm.check_invariants()
            assert hmm.order == order

    def test_forbidden_entries_are_zero(self, rng):
        hmm = random_hmm(5, 3, 1, rng=rng)
        forbidden = ~np.broadcast_to(hmm.mask, hmm.transitions.shape)
        assert np.all(hmm.transitions[forbidden] == 0.0)


class TestOrderReduce:
    def test_order_one_is_identity(self, rng):
        hmm = random_hmm(3, 1, 1, rng=rng)
        ch = order_reduce(hmm)
        assert ch.states == [(0,), (1,), (2,)]
        np.testing.assert_allclose(np.exp(ch.log_init), hmm.pi)

    def test_order_two_full_mask_path_probabilities(self, rng):
        mask = np.ones((2, 2), dtype=bool)
        hmm = random_hmm(2, 2, 1, rng=rng, mask=mask)
        ch = order_reduce(hmm)
        assert len(ch.full_states) <= 4
        for path in product(range(2), repeat=4):
            direct = hmm.pi[path[0]] * hmm.boot1[path[0], path[1]]
            for t in range(2, 4):
                direct *= hmm.transitions[path[t - 2], path[t - 1], path[t]]
            comp = ch.composite_path(path, 2)
            assert ch.path_log_prob(comp) == pytest.approx(np.log(direct), abs=1e-12)

    def test_order_three_prunes_inconsistent_triples(self, rng):
        hmm = random_hmm(3, 3, 1, rng=rng)
        ch = order_reduce(hmm)
        mask = hmm.mask
        for s in ch.full_states:
            assert mask[s[0], s[1]] and mask[s[1], s[2]]
        # 3 states x 2 successors x 2 successors
        assert len(ch.full_states) == 12

    @pytest.mark.parametrize("order", [1, 2, 3])
    def test_every_enumerated_path_matches_direct_product(self, rng, order):
        hmm = random_hmm(3, order, 1, rng=rng)
        ch = hmm.chain
        for path in product(range(3), repeat=5):
            direct = chain_log_prob(hmm, path)
            if not np.isfinite(direct):
                continue
            assert ch.path_log_prob(ch.composite_path(path, order)) == pytest.approx(direct, abs=1e-12)

    def test_padding_marks_history_before_start(self, rng):
        ch = order_reduce(random_hmm(3, 3, 1, rng=rng))
        assert (PAD, PAD, 0) in ch.states


class TestForward:
    def test_single_state_two_frames(self):
        # N(0; 0, 1/(2 pi)) has density exactly 1; shift the mean to get 0.5
        var = 1.0 / (2.0 * np.pi)
        hmm = _single_state(mean=0.0, var=var)
        x = np.sqrt(2.0 * var * np.log(2.0))
        obs = np.array([[x], [-x]])
        assert log_forward(hmm, obs) == pytest.approx(2.0 * np.log(0.5), abs=1e-12)

    def test_identical_emissions_marginalize_transitions(self, rng):
        for order in (1, 2, 3):
            hmm = random_hmm(3, order, 2, rng=rng)
            hmm.means[:] = hmm.means[0]
            hmm.variances[:] = hmm.variances[0]
            hmm.weights[:] = hmm.weights[0]
            obs = rng.normal(size=(6, 2))
            expected = hmm.state_log_likelihood(obs)[:, 0].sum()
            assert log_forward(hmm, obs) == pytest.approx(expected, rel=1e-12)

    def test_matches_brute_force_order_two(self, rng):
        hmm = random_hmm(2, 2, 1, rng=rng, mask=np.ones((2, 2), dtype=bool))
        obs = rng.normal(size=(4, 1))
        bf = brute_force_loglik(hmm, obs)
        assert abs(log_forward(hmm, obs) - bf) <= 1e-9 * abs(bf)

    @given(st.integers(0, 10_000), st.integers(1, 3), st.integers(1, 3), st.integers(1, 6))
    def test_oracle_equivalence_property(self, seed, n, order, T):
        rng = np.random.default_rng(seed)
        hmm = random_hmm(n, order, 2, n_mix=2, rng=rng)
        obs = rng.normal(size=(T, 2))
        bf = brute_force_loglik(hmm, obs)
        assert abs(log_forward(hmm, obs) - bf) <= 1e-9 * abs(bf) + 1e-12

    def test_short_sequences_use_available_boot_factors(self, rng):
        hmm = random_hmm(3, 3, 1, rng=rng)
        for T in (1, 2):
            obs = rng.normal(size=(T, 1))
            assert log_forward(hmm, obs) == pytest.approx(brute_force_loglik(hmm, obs), rel=1e-12)

    def test_dimension_mismatch(self, rng):
        hmm = random_hmm(3, 1, 2, rng=rng)
        with pytest.raises(DimensionMismatch):
            log_forward(hmm, np.zeros((4, 3)))

    def test_zero_density_everywhere_gives_minus_inf(self):
        hmm = _single_state()
        obs = np.array([[np.inf]])
        assert log_forward(hmm, obs) == -np.inf
        assert brute_force_loglik(hmm, obs) == -np.inf


class TestBruteForce:
    def test_single_state_is_sum_of_frame_logs(self, rng):
        hmm = _single_state(dim=2)
        obs = rng.normal(size=(5, 2))
        assert brute_force_loglik(hmm, obs) == pytest.approx(hmm.state_log_likelihood(obs)[:, 0].sum())

    def test_guard(self, rng):
        hmm = random_hmm(3, 1, 1, rng=rng)
        with pytest.raises(TooLarge):
            brute_force_loglik(hmm, np.zeros((13, 1)))


class TestViterbi:
    def test_single_state(self, rng):
        hmm = _single_state()
        obs = rng.normal(size=(6, 1))
        path, score = viterbi(hmm, obs)
        assert np.all(path == 0)
        assert score == pytest.approx(log_forward(hmm, obs))

    @pytest.mark.parametrize("order", [1, 2, 3])
    def test_matches_enumeration(self, rng, order):
        for _ in range(10):
            hmm = random_hmm(3, order, 1, rng=rng)
            obs = rng.normal(size=(5, 1))
            path, score = viterbi(hmm, obs)
            bf_path, bf_score = brute_force_viterbi(hmm, obs)
            np.testing.assert_array_equal(path, bf_path)
            assert score == pytest.approx(bf_score, abs=1e-9)

    def test_tie_goes_to_smaller_index(self):
        mask = np.ones((2, 2), dtype=bool)
        hmm = CircularHmm(
            pi=np.array([0.5, 0.5]),
            transitions=np.full((2, 2), 0.5),
            weights=np.ones((2, 1)),
            means=np.zeros((2, 1, 1)),
            variances=np.ones((2, 1, 1)),
            mask=mask,
        )
        path, _ = viterbi(hmm, np.zeros((4, 1)))
        assert np.all(path == 0)
        assert np.all(viterbi(hmm, np.zeros((4, 1)))[0] == path)


class TestBaumWelch:
    def _data(self, rng, order=1, n=3, count=6, T=40):
        gen = random_hmm(n, order, 2, rng=rng, mean_scale=3.0)
        return [sample(gen, T, rng)[0] for _ in range(count)]

    @pytest.mark.parametrize("order", [1, 2, 3])
    def test_monotone_and_normalized(self, rng, order):
        data = self._data(rng, order)
        init = init_from_data(data, 3, 2, rng=1)
        for _ in range(1, order):
            init = bootstrap_order(init)
        model, trace = baum_welch(init, data, max_iters=15, rel_tol=0.0)
        assert np.all(np.diff(trace) >= -1e-8)
        assert model.check_invariants()
        assert np.all(model.variances >= model.var_floor - 0.0)

    def test_invariants_after_every_iteration(self, rng):
        data = self._data(rng, 2)
        model = bootstrap_order(init_from_data(data, 3, 1, rng=0))
        for _ in range(5):
            model, _ = baum_welch(model, data, max_iters=1, rel_tol=0.0)
            assert model.check_invariants(atol=1e-12)

    def test_zero_iterations_is_no_op(self, rng):
        data = self._data(rng)
        init = init_from_data(data, 3, 2, rng=0)
        model, trace = baum_welch(init, data, max_iters=0)
        assert len(trace) == 1
        assert dumps(model_to_dict(model)) == dumps(model_to_dict(init))

    def test_recovers_generator_transitions(self):
        dists = []
        for seed in range(10):
            rng = np.random.default_rng(seed)
            gen = random_hmm(3, 1, 2, rng=rng, mean_scale=4.0)
            gen.transitions = np.array([[0.8, 0.2, 0.0], [0.0, 0.7, 0.3], [0.25, 0.0, 0.75]])
            gen.invalidate()
            data = [sample(gen, 200, rng)[0] for _ in range(10)]
            model = train_chain(data, 1, n_states=3, n_mix=1, max_iters=50, seed=seed)[-1][0]
            # relabel by matching means; rotations preserve the ring
            best = min(
                range(3),
                key=lambda s: np.sum((np.roll(model.means[:, 0], s, axis=0) - gen.means[:, 0]) ** 2),
            )
            perm = np.roll(np.arange(3), -best)
            A = model.transitions[np.ix_(perm, perm)]
            dists.append(0.5 * np.abs(A - gen.transitions).sum(axis=1).max())
        assert np.mean(dists) < 0.1

    def test_empty_dataset(self):
        with pytest.raises(EmptyDataset):
            train_chain([], 1)

    def test_dimension_mismatch(self, rng):
        data = self._data(rng)
        init = init_from_data(data, 3, 1, rng=0)
        with pytest.raises(DimensionMismatch):
            baum_welch(init, [np.zeros((5, 3))])

    def test_training_is_deterministic(self, rng):
        data = self._data(rng)
        a = train_chain(data, 2, n_states=3, n_mix=2, seed=5)[-1][0]
        b = train_chain(data, 2, n_states=3, n_mix=2, seed=5)[-1][0]
        assert dumps(model_to_dict(a)) == dumps(model_to_dict(b))


class TestBootstrap:
    def test_broadcast_definition(self):
        hmm = random_hmm(3, 1, 1, rng=0)
        hmm.transitions[0] = [0.7, 0.3, 0.0]
        hmm.invalidate()
        up = bootstrap_order(hmm)
        for i in range(3):
            assert up.transitions[i, 0, 0] == 0.7
            assert up.transitions[i, 0, 1] == 0.3
        assert up.check_invariants()

    @pytest.mark.parametrize("order", [1, 2])
    def test_likelihood_preserved(self, rng, order):
        hmm = random_hmm(4, order, 2, n_mix=2, rng=rng)
        up = bootstrap_order(hmm)
        for _ in range(20):
            obs = rng.normal(size=(int(rng.integers(1, 30)), 2))
            assert abs(log_forward(up, obs) - log_forward(hmm, obs)) <= 1e-10

    def test_order_four_rejected(self, rng):
        with pytest.raises(BadOrder):
            bootstrap_order(random_hmm(3, 3, 1, rng=rng))
        with pytest.raises(BadOrder):
            bootstrap_order(random_hmm(3, 1, 1, rng=rng), target_order=3)


class TestSampling:
    def test_deterministic_ring(self):
        n = 3
        hmm = CircularHmm(
            pi=np.array([1.0, 0.0, 0.0]),
            transitions=np.roll(np.eye(n), 1, axis=1),
            weights=np.ones((n, 1)),
            means=np.zeros((n, 1, 1)),
            variances=np.ones((n, 1, 1)),
            mask=circular_mask(n),
        )
        _, path = sample(hmm, 7, 0)
        np.testing.assert_array_equal(path, [0, 1, 2, 0, 1, 2, 0])

    def test_empirical_frequencies(self):
        hmm = random_hmm(3, 2, 1, rng=3)
        path = sample_path(hmm, 100_000, np.random.default_rng(0))
        counts = np.zeros((3, 3, 3))
        np.add.at(counts, (path[:-2], path[1:-1], path[2:]), 1)
        totals = counts.sum(axis=2, keepdims=True)
        seen = totals[..., 0] > 2000
        freq = counts / np.maximum(totals, 1)
        assert np.abs(freq[seen] - hmm.transitions[seen]).max() < 0.02

    def test_same_seed_same_output(self):
        hmm = random_hmm(3, 3, 2, rng=1)
        a, pa = sample(hmm, 50, 9)
        b, pb = sample(hmm, 50, 9)
        np.testing.assert_array_equal(a, b)
        np.testing.assert_array_equal(pa, pb)


class TestPersistence:
    @pytest.mark.parametrize("order", [1, 2, 3])
    def test_round_trip_is_lossless(self, tmp_path, rng, order):
        hmm = random_hmm(4, order, 3, n_mix=2, rng=rng)
        path = tmp_path / "m.json"
        save_model(hmm, path)
        back = load_model(path)
        for name in ("pi", "transitions", "weights", "means", "variances"):
            np.testing.assert_array_equal(getattr(back, name), getattr(hmm, name))
        assert path.read_text() == dumps(model_to_dict(back))

    def test_only_allowed_entries_serialized(self, rng):
        d = model_to_dict(random_hmm(5, 2, 1, rng=rng))
        assert d["format"] == "csphmm-model/1"
        assert all(len(row) == 2 for row in d["transitions"])
        assert model_from_dict(d).check_invariants()


class TestEstimator:
    def test_fit_score_decode(self, rng):
        gen = random_hmm(3, 1, 2, rng=rng, mean_scale=3.0)
        seqs = [sample(gen, 50, rng)[0] for _ in range(5)]
        X = np.vstack(seqs)
        lengths = [len(s) for s in seqs]
        est = CircularHMM(n_states=3, order=2, n_mix=1, random_state=0).fit(X, lengths)
        assert est.model_.order == 2
        assert est.n_features_in_ == 2
        assert est.score(X, lengths) == pytest.approx(sum(log_forward(est.model_, s) for s in seqs))
        lp, path = est.decode(seqs[0])
        assert len(path) == 50 and np.all(path < 3)
        assert est.get_params()["order"] == 2

    def test_sample_shape(self, rng):
        est = CircularHMM(n_states=3, n_mix=1, random_state=0).fit(rng.normal(size=(60, 2)))
        X, states = est.sample(10, random_state=0)
        assert X.shape == (10, 2) and states.shape == (10,)
