import math

import numpy as np
import pytest

from wattsplit.errors import ConfigError, DataError
from wattsplit.hpo import (ALL_FAMILIES, Choice, QUniform, SearchSpace, TpeConfig,
                           Trial, TrialHistory, Uniform, best_trial,
                           default_search_space, family_subspace, parzen,
                           parzen_pdf, run_optimization, sample_random,
                           split_good_bad, tpe_suggest)


def neural_subtree_space():
    return SearchSpace((
        Choice("optimizer", ("adam", "nadam")),
        Choice("learning_rate", (1e-2, 1e-3, 1e-4)),
        Choice("loss", ("mse", "mae")),
        Choice("window_size", (20, 50, 100)),
        Uniform("dropout", 0.1, 0.3),
    ))


def make_trials(configs_losses, status="ok"):
    return [Trial(i, cfg, loss, {}, status, i) for i, (cfg, loss) in enumerate(configs_losses)]


def check_config(specs, config, seen):
    """Recursive bounds/lattice/conditionality validation."""
    for spec in specs:
        assert spec.name in config
        seen.add(spec.name)
        v = config[spec.name]
        if isinstance(spec, Uniform):
            assert spec.lo <= v <= spec.hi
        elif isinstance(spec, QUniform):
            assert spec.lo <= v <= spec.hi
            assert any(np.isclose(v, spec.lattice()))
        else:
            assert v in spec.options
            check_config(spec.subspaces[spec.options.index(v)], config, seen)


def assert_valid_config(space, config):
    seen = set()
    check_config(space.params, config, seen)
    assert seen == set(config)  # nothing from unchosen branches


class TestSpecs:
    def test_validation(self):
        with pytest.raises(ConfigError):
            Uniform("x", 2, 1)
        with pytest.raises(ConfigError):
            QUniform("x", 0, 1, 0)
        with pytest.raises(ConfigError):
            Choice("x", ())
        with pytest.raises(ConfigError):
            TpeConfig(gamma=0)

    def test_duplicate_names_along_path_rejected(self):
        with pytest.raises(ConfigError, match="duplicate"):
            SearchSpace((Choice("a", ("x",), ((Uniform("a", 0, 1),),)),))

    def test_same_name_on_sibling_branches_allowed(self):
        space = SearchSpace((Choice("fam", ("x", "y"),
                                    ((Uniform("p", 0, 1),), (Uniform("p", 5, 6),))),))
        assert isinstance(space, SearchSpace)

    def test_quniform_lattice(self):
        assert list(QUniform("n", 5, 7, 1).lattice()) == [5, 6, 7]
        assert QUniform("n", 5, 7, 1).quantize(5.4) == 5
        assert QUniform("n", 5, 7, 1).quantize(9.9) == 7
        assert isinstance(QUniform("n", 5, 7, 1).quantize(6.2), int)


class TestSampleRandom:
    def test_choice_frequency_balanced(self):
        space = SearchSpace((Choice("optimizer", ("adam", "nadam")),))
        rng = np.random.default_rng(0)
        draws = [sample_random(space, rng)["optimizer"] for _ in range(10_000)]
        freq = draws.count("adam") / len(draws)
        assert abs(freq - 0.5) <= 0.02

    def test_quniform_hits_lattice_only(self):
        space = SearchSpace((QUniform("num_layers", 5, 7, 1),))
        rng = np.random.default_rng(1)
        values = {sample_random(space, rng)["num_layers"] for _ in range(500)}
        assert values == {5, 6, 7}

    def test_unchosen_branches_never_instantiated(self):
        rng = np.random.default_rng(2)
        space = default_search_space()
        for _ in range(300):
            config = sample_random(space, rng)
            assert_valid_config(space, config)


class TestSplitGoodBad:
    def test_gamma_quarter_of_twenty(self):
        trials = make_trials([({}, float(i)) for i in range(20)])
        good, bad = split_good_bad(trials, 0.25)
        assert len(good) == 5 and len(bad) == 15
        assert max(t.loss for t in good) <= min(t.loss for t in bad)

    def test_single_trial(self):
        good, bad = split_good_bad(make_trials([({}, 1.0)]), 0.25)
        assert len(good) == 1 and not bad

    def test_equal_losses_tie_to_low_ids(self):
        trials = make_trials([({}, 7.0) for _ in range(8)])
        good, _ = split_good_bad(trials, 0.25)
        assert [t.id for t in good] == [0, 1]

    def test_empty_history_rejected(self):
        with pytest.raises(DataError):
            split_good_bad([], 0.25)


class TestParzen:
    def test_no_observations_gives_uniform_prior(self):
        spec = Uniform("x", 2.0, 6.0)
        assert parzen_pdf([], spec, 3.7) == pytest.approx(1 / 4.0)

    def test_choice_count_arithmetic(self):
        spec = Choice("c", ("a", "b"))
        unit_prior = TpeConfig(prior_weight=1.0)
        assert parzen_pdf(["a", "a"], spec, "a", unit_prior) == pytest.approx(3 / 4)
        assert parzen_pdf(["a", "a"], spec, "b", unit_prior) == pytest.approx(1 / 4)

    def test_symmetric_observations_symmetric_density(self):
        spec = Uniform("x", 0.0, 10.0)
        est = parzen(spec, [2.0, 8.0])
        xs = np.linspace(0, 10, 101)
        np.testing.assert_allclose(est.pdf(xs), est.pdf(10 - xs), rtol=1e-9)

    @pytest.mark.parametrize("obs", [[], [5.0], [1.0, 1.5, 9.0], list(np.linspace(2, 8, 12))])
    def test_continuous_integral_is_one(self, obs):
        spec = Uniform("x", 0.0, 10.0)
        xs = np.linspace(0, 10, 20_001)
        integral = np.trapezoid(parzen(spec, obs).pdf(xs), xs)
        assert integral == pytest.approx(1.0, abs=1e-3)

    @pytest.mark.parametrize("obs", [[], [5], [5, 6, 6, 7]])
    def test_lattice_mass_is_one(self, obs):
        spec = QUniform("n", 5, 7, 1)
        est = parzen(spec, obs)
        assert est.pmf.sum() == pytest.approx(1.0, abs=1e-12)

    def test_choice_mass_is_one(self):
        est = parzen(Choice("c", ("a", "b", "c")), ["a", "c"])
        assert est.pmf.sum() == pytest.approx(1.0, abs=1e-12)

    def test_outside_domain_rejected(self):
        with pytest.raises(DataError):
            parzen_pdf([5.0], Uniform("x", 0, 10), 11.0)

    def test_scale_consistency(self):
        a, b = 3.0, 7.0
        obs = [2.0, 5.0, 9.0]
        base = parzen(Uniform("x", 0.0, 10.0), obs)
        scaled = parzen(Uniform("x", b, a * 10 + b), [a * o + b for o in obs])
        xs = np.linspace(0.2, 9.8, 41)
        np.testing.assert_allclose(scaled.pdf(a * xs + b), base.pdf(xs) / a, rtol=1e-9)

    def test_scale_consistency_preserves_ratio_argmax(self):
        a, b = 3.0, 7.0
        good, bad = [2.0, 2.4], [6.0, 9.0, 7.5]
        cands = np.array([1.0, 2.2, 5.0, 8.0])
        lo, hi = 0.0, 10.0
        l1 = parzen(Uniform("x", lo, hi), good)
        g1 = parzen(Uniform("x", lo, hi), bad)
        l2 = parzen(Uniform("x", a * lo + b, a * hi + b), [a * o + b for o in good])
        g2 = parzen(Uniform("x", a * lo + b, a * hi + b), [a * o + b for o in bad])
        r1 = l1.pdf(cands) / g1.pdf(cands)
        r2 = l2.pdf(a * cands + b) / g2.pdf(a * cands + b)
        np.testing.assert_allclose(r1, r2, rtol=1e-9)
        assert np.argmax(r1) == np.argmax(r2)

    def test_sampler_stays_in_domain(self, rng):
        est = parzen(Uniform("x", 0.0, 1.0), [0.01, 0.99, 0.5])
        draws = est.sample(rng, 500)
        assert np.all((draws >= 0.0) & (draws <= 1.0))


class TestTpeSuggest:
    def test_empty_history_is_random_within_bounds(self):
        space = neural_subtree_space()
        config = tpe_suggest(space, TrialHistory(), TpeConfig(), np.random.default_rng(0))
        assert_valid_config(space, config)

    def test_good_nadam_history_selects_nadam(self):
        space = SearchSpace((Choice("optimizer", ("adam", "nadam")),))
        trials = []
        for i in range(3):
            trials.append(Trial(i, {"optimizer": "nadam"}, 1.0 + i * 0.01, {}, "ok", i))
        for i in range(9):
            opt = "nadam" if i < 4 else "adam"
            trials.append(Trial(3 + i, {"optimizer": opt}, 10.0 + i, {}, "ok", 3 + i))
        cfg = TpeConfig(n_startup=1)
        # l(nadam) = 4/5, l(adam) = 1/5; g(nadam) = 5/11, g(adam) = 6/11
        for seed in range(10):
            config = tpe_suggest(SearchSpace(space.params), trials, cfg,
                                 np.random.default_rng(seed))
            assert config["optimizer"] == "nadam"

    def test_unseen_branch_falls_back_to_prior(self):
        space = default_search_space(("co", "seq2point"))
        trials = [Trial(i, {"family": "co", "k": 2}, 5.0, {}, "ok", i) for i in range(12)]
        config = tpe_suggest(space, trials, TpeConfig(n_startup=1),
                             np.random.default_rng(3))
        assert_valid_config(space, config)

    def test_suggestions_respect_constraints_in_bulk(self):
        space = default_search_space()
        rng = np.random.default_rng(7)
        history = []
        for i in range(40):
            config = sample_random(space, rng)
            history.append(Trial(i, config, float(rng.uniform(1, 100)), {}, "ok", i))
        cfg = TpeConfig()
        n_tpe, n_rand = 4000, 6000
        for _ in range(n_tpe):
            assert_valid_config(space, tpe_suggest(space, history, cfg, rng))
        for _ in range(n_rand):
            assert_valid_config(space, sample_random(space, rng))


class TestBestTrial:
    def test_single(self):
        t = make_trials([({}, 3.0)])
        assert best_trial(t) is t[0]

    def test_reported_losses(self):
        trials = make_trials([({}, 9.2), ({}, 7.12), ({}, 8.31)])
        assert best_trial(trials).loss == 7.12

    def test_tie_goes_to_lowest_id(self):
        trials = make_trials([({}, 5.0), ({}, 5.0)])
        assert best_trial(trials).id == 0

    def test_failed_only_rejected(self):
        trials = make_trials([({}, math.inf)], status="failed")
        with pytest.raises(DataError):
            best_trial(trials)


class TestRunOptimization:
    def objective(self, config, seed):
        return config.get("dropout", 0.2) + {"adam": 0.0, "nadam": 0.5}[config["optimizer"]], {}

    def test_exact_budget(self):
        space = neural_subtree_space()
        history, best = run_optimization(space, self.objective, 30, seed=0)
        assert len(history) == 30
        assert best.ok

    def test_constant_objective_ties_to_trial_zero(self):
        space = neural_subtree_space()
        history, best = run_optimization(space, lambda c, s: (1.0, {}), 8, seed=1)
        assert best.id == 0

    def test_deterministic_given_seed(self):
        space = neural_subtree_space()
        h1, b1 = run_optimization(space, self.objective, 12, seed=5)
        h2, b2 = run_optimization(space, self.objective, 12, seed=5)
        assert [(t.id, t.config, t.loss) for t in h1] == [(t.id, t.config, t.loss) for t in h2]
        assert b1.id == b2.id

    def test_trial_seed_is_xor_of_seed_and_id(self):
        seeds = []
        space = neural_subtree_space()

        def spy(config, seed):
            seeds.append(seed)
            return 1.0, {}

        run_optimization(space, spy, 4, seed=12)
        assert seeds == [12 ^ 0, 12 ^ 1, 12 ^ 2, 12 ^ 3]

    def test_startup_equal_to_budget_reproduces_random_search(self):
        space = neural_subtree_space()
        cfg = TpeConfig(n_startup=15)
        h_tpe, _ = run_optimization(space, self.objective, 15, seed=3, cfg=cfg)
        h_rand, _ = run_optimization(space, self.objective, 15, seed=3, sampler="random")
        assert [t.config for t in h_tpe] == [t.config for t in h_rand]

    def test_failed_trials_recorded_and_excluded(self):
        space = SearchSpace((Uniform("x", 0.0, 1.0),))

        def flaky(config, seed):
            if config["x"] < 0.5:
                raise DataError("synthetic failure")
            return config["x"], {}

        history, best = run_optimization(space, flaky, 20, seed=2)
        statuses = {t.status for t in history}
        assert statuses == {"ok", "failed"}
        assert len(history) == 20
        assert all(t.loss == math.inf for t in history if t.status == "failed")
        assert best.loss >= 0.5
        good, bad = split_good_bad(list(history), 0.25)
        assert all(t.ok for t in good + bad)

    def test_all_failed_raises(self):
        space = SearchSpace((Uniform("x", 0.0, 1.0),))

        def broken(config, seed):
            raise DataError("nope")

        with pytest.raises(DataError, match="all trials failed"):
            run_optimization(space, broken, 3, seed=0)

    def test_non_finite_loss_marks_failure(self):
        space = SearchSpace((Uniform("x", 0.0, 1.0),))
        history, best = run_optimization(
            space, lambda c, s: (math.nan if c["x"] < 0.7 else c["x"], {}), 20, seed=4)
        assert any(t.status == "failed" for t in history)
        assert best.ok


class TestDefaultSpace:
    def test_eleven_families_at_root(self):
        space = default_search_space()
        root = space.params[0]
        assert isinstance(root, Choice) and root.name == "family"
        assert set(root.options) == set(ALL_FAMILIES) and len(root.options) == 11

    def test_family_subspace_mapping(self):
        assert {s.name for s in family_subspace("co")} == {"k"}
        assert {s.name for s in family_subspace("dt")} == {"criterion", "min_samples_split"}
        assert {s.name for s in family_subspace("rf")} == {"criterion", "min_samples_split",
                                                           "n_estimators"}
        assert {s.name for s in family_subspace("fcnn")} == {"optimizer", "learning_rate",
                                                             "loss", "num_layers", "dropout"}
        assert {s.name for s in family_subspace("lstm")} == {"optimizer", "learning_rate",
                                                             "loss", "sequence_length", "dropout"}
        assert {s.name for s in family_subspace("seq2seq")} == {"optimizer", "learning_rate",
                                                                "loss", "window_size", "dropout"}

    def test_learning_rates_default_includes_reported_optimum(self):
        lrs = dict.fromkeys(s.name for s in family_subspace("seq2point"))
        space = family_subspace("seq2point")
        lr_spec = next(s for s in space if s.name == "learning_rate")
        assert 1e-2 in lr_spec.options
