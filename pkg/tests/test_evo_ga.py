import csv
from concurrent.futures import ThreadPoolExecutor

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from vlevo.evo_ga import (
    GaConfig,
    Individual,
    TumorEvaluator,
    derive_seed,
    evaluate_static,
    initial_population,
    mutate,
    perturb,
    run_ga,
    tournament,
)
from vlevo.tumor_sim import NP_BOUNDS, NpDesign, Treatment, load_fixture


def constant(treatment, seed):
    return 100.0


def n_types(treatment, seed):
    return float(treatment.n_types)


def more_is_better(treatment, seed):
    return 10.0 - treatment.n_types


def noisy_bias(treatment, seed):
    # smooth landscape plus seed noise; lower attached bias is better
    bias = np.mean([t.attached_migration_bias for t in treatment.np_types])
    return 100.0 * bias + np.random.default_rng(seed).uniform(0, 5)


def design(**kw):
    base = dict(attached_migration_bias=0.5, unattached_migration_bias=0.5,
                relative_adhesion=5.0, relative_repulsion=5.0, persistence_time=5.0)
    base.update(kw)
    return NpDesign(**base)


class TestConfig:
    def test_defaults(self):
        c = GaConfig()
        assert (c.population_size, c.tournament_size, c.evaluation_budget, c.samples_per_evaluation) == (20, 2, 1000, 5)
        assert c.mutation_step_fraction == 0.05 and c.max_types == 10
        assert c.generations == 180 and c.evaluator_calls == 1000

    def test_budget_too_small(self):
        with pytest.raises(ValueError, match="initial population"):
            GaConfig(evaluation_budget=99)
        assert GaConfig(evaluation_budget=100).generations == 0

    @pytest.mark.parametrize("kw", [dict(p_add_type=1.5), dict(p_add_type=-0.1), dict(tournament_size=21),
                                    dict(samples_per_evaluation=0), dict(max_types=11)])
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            GaConfig(**kw)

    def test_arms(self):
        assert GaConfig.fixed().p_add_type == 0.0
        g = GaConfig.growing(2, seed=4)
        assert (g.p_add_type, g.types_added_per_event, g.seed) == (0.5, 2, 4)

    def test_individual_fitness_checked(self):
        with pytest.raises(ValueError):
            Individual(Treatment([design()]), -1.0)
        assert Individual(Treatment([design()])).sampled_fitness is None


class TestMutate:
    def test_clamp(self):
        t = Treatment([design(persistence_time=9.9)])
        assert perturb(t, 0, 4, 0.05).np_types[0].persistence_time == 10.0
        assert perturb(t, 0, 4, -0.05).np_types[0].persistence_time == pytest.approx(9.4)

    def test_add_two(self):
        cfg = GaConfig(p_add_type=1.0, types_added_per_event=2)
        child = mutate(Individual(Treatment([design()]), 5.0), cfg, np.random.default_rng(0))
        assert child.n_types == 3 and child.treatment.worker_counts == [17, 17, 16]
        assert child.treatment.np_types[0] == design()
        assert child.sampled_fitness is None

    def test_add_at_cap_consumed(self):
        cfg = GaConfig(p_add_type=1.0)
        t = Treatment([design()] * 10)
        assert mutate(Individual(t), cfg, np.random.default_rng(0)).treatment == t

    def test_add_two_from_nine_consumed(self):
        cfg = GaConfig(p_add_type=1.0, types_added_per_event=2)
        t = Treatment([design()] * 9)
        assert mutate(Individual(t), cfg, np.random.default_rng(0)).treatment == t

    def test_single_gene_changed(self):
        cfg = GaConfig()
        rng = np.random.default_rng(1)
        parent = Individual(Treatment([design(), design(persistence_time=1.0)]))
        for _ in range(200):
            child = mutate(parent, cfg, rng)
            a = parent.treatment.type_table()
            b = child.treatment.type_table()
            diff = np.argwhere(a != b)
            assert len(diff) <= 1
            for i, j in diff:
                _, lo, hi = NP_BOUNDS[j]
                assert abs(a[i, j] - b[i, j]) <= 0.05 * (hi - lo) + 1e-12

    def test_gene_choice_uniform(self):
        # every (type, parameter) slot gets picked
        cfg = GaConfig()
        rng = np.random.default_rng(2)
        parent = Individual(Treatment([design(), design()]))
        hits = np.zeros((2, 5), dtype=int)
        for _ in range(4000):
            d = np.argwhere(parent.treatment.type_table() != mutate(parent, cfg, rng).treatment.type_table())
            for i, j in d:
                hits[i, j] += 1
        assert hits.min() > 300

    @settings(max_examples=50, deadline=None)
    @given(seed=st.integers(0, 2**32 - 1), n=st.integers(1, 10), p=st.floats(0, 1))
    def test_children_valid(self, seed, n, p):
        rng = np.random.default_rng(seed)
        cfg = GaConfig(p_add_type=p, types_added_per_event=int(rng.integers(1, 3)))
        t = Treatment([NpDesign.random(rng) for _ in range(n)])
        child = mutate(Individual(t), cfg, rng).treatment
        assert n <= child.n_types <= 10
        assert sum(child.worker_counts) == 50


class TestSampling:
    def test_deterministic_evaluator(self):
        assert evaluate_static(constant, Treatment([design()]), 5, 3) == 100.0

    def test_mean_by_index(self):
        table = {derive_seed(11, i): v for i, v in enumerate([400, 420, 440, 410, 430])}
        assert evaluate_static(lambda t, s: table[s], Treatment([design()]), 5, 11) == 420.0

    def test_seeds_distinct(self):
        seen = []
        evaluate_static(lambda t, s: seen.append(s) or 0.0, Treatment([design()]), 5, 0)
        assert len(set(seen)) == 5

    def test_executor_same_result(self):
        t = Treatment([design()])
        with ThreadPoolExecutor(2) as ex:
            assert evaluate_static(noisy_bias, t, 5, 9, ex) == evaluate_static(noisy_bias, t, 5, 9)

    def test_bad_samples(self):
        with pytest.raises(ValueError):
            evaluate_static(constant, Treatment([design()]), 0, 0)

    def test_failure_propagates(self):
        def boom(t, s):
            raise RuntimeError("simulator crashed")

        with pytest.raises(RuntimeError, match="crashed"):
            evaluate_static(boom, Treatment([design()]), 5, 0)

    @pytest.mark.slow
    def test_static_sampling_reduces_variance(self):
        ev = TumorEvaluator(load_fixture())
        t = Treatment([design(attached_migration_bias=0.8, unattached_migration_bias=0.2)])
        singles = [ev(t, derive_seed(1, r)) for r in range(100)]
        means = [evaluate_static(ev, t, 5, derive_seed(2, r)) for r in range(100)]
        assert np.var(means, ddof=1) < np.var(singles, ddof=1)


class TestTournament:
    def test_full_tournament(self):
        fit = [3.0, 1.0, 4.0, 1.5, 9.0]
        rng = np.random.default_rng(0)
        assert tournament(fit, 5, rng, "best") == 1
        assert tournament(fit, 5, rng, "worst") == 4

    def test_pair(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            assert tournament([5.0, 7.0], 2, rng, "best") == 0
            assert tournament([5.0, 7.0], 2, rng, "worst") == 1

    def test_ties_first_drawn(self):
        for seed in range(20):
            first = np.random.default_rng(seed).choice(3, size=3, replace=False)[0]
            assert tournament([2.0, 2.0, 2.0], 3, np.random.default_rng(seed)) == first

    def test_uniformity(self):
        # each index joins a 2-tournament with probability 2/P
        P, n = 20, 100_000
        rng = np.random.default_rng(5)
        counts = np.zeros(P)
        for _ in range(n):
            counts[rng.choice(P, size=2, replace=False)] += 1
        freq = counts / n
        assert np.all(np.abs(freq - 2 / P) < 5 * np.sqrt(0.1 * 0.9 / n))
        # and tournament() uses exactly that draw
        a = np.random.default_rng(6)
        b = np.random.default_rng(6)
        fit = np.arange(P, dtype=float)
        for _ in range(100):
            assert tournament(fit, 2, a) == b.choice(P, size=2, replace=False).min()

    def test_errors(self):
        rng = np.random.default_rng(0)
        with pytest.raises(ValueError):
            tournament([1.0], 2, rng)
        with pytest.raises(ValueError):
            tournament([1.0, 2.0], 2, rng, "median")


class TestRunGa:
    def test_constant_no_replacement(self):
        cfg = GaConfig(seed=1, p_add_type=0.5)
        tr = run_ga(constant, cfg)
        assert tr.replacements == 0
        assert [i.treatment for i in tr.population] == initial_population(cfg)
        assert tr.evaluations == 1000

    def test_anti_growth(self):
        tr = run_ga(n_types, GaConfig.growing(seed=2))
        assert all(i.n_types == 1 for i in tr.population)
        assert tr.replacements == 0
        assert all(h[0] == 20 for h in tr.type_histogram)

    def test_pro_growth_reaches_cap(self):
        tr = run_ga(more_is_better, GaConfig.growing(seed=3))
        assert tr.best_type_count[-1] == 10
        assert max(i.n_types for i in tr.population) == 10

    def test_add_two_stops_at_nine(self):
        tr = run_ga(more_is_better, GaConfig.growing(2, seed=3))
        assert tr.best_type_count[-1] == 9
        assert all(i.n_types % 2 == 1 for i in tr.population)

    def test_fixed_length_keeps_one_type(self):
        tr = run_ga(noisy_bias, GaConfig.fixed(seed=4))
        assert all(h == [20] + [0] * 9 for h in tr.type_histogram)
        assert tr.replacements > 0

    def test_improves(self):
        tr = run_ga(noisy_bias, GaConfig.fixed(seed=5))
        assert tr.best_fitness[-1] < tr.best_fitness[0]
        assert tr.mean_fitness[-1] < tr.mean_fitness[0]

    def test_trace_shape(self):
        tr = run_ga(noisy_bias, GaConfig(seed=6))
        assert tr.generations == 180 and len(tr.mean_fitness) == 181
        assert tr.best.sampled_fitness == tr.best_fitness[-1]
        assert tr.best.n_types == tr.best_type_count[-1]

    def test_shared_initial_population(self):
        a = run_ga(noisy_bias, GaConfig.fixed(seed=7))
        b = run_ga(noisy_bias, GaConfig.growing(2, seed=7))
        assert a.mean_fitness[0] == b.mean_fitness[0] and a.best_fitness[0] == b.best_fitness[0]
        assert initial_population(GaConfig.fixed(seed=7)) == initial_population(GaConfig.growing(seed=7))

    def test_explicit_initial(self):
        init = [Treatment([design()])] * 20
        tr = run_ga(constant, GaConfig(seed=0), initial=init)
        assert [i.treatment for i in tr.population] == init
        with pytest.raises(ValueError):
            run_ga(constant, GaConfig(), initial=init[:5])

    def test_deterministic(self):
        cfg = GaConfig.growing(seed=8)
        a, b = run_ga(noisy_bias, cfg), run_ga(noisy_bias, cfg)
        assert a.best_fitness == b.best_fitness and a.type_histogram == b.type_histogram
        assert a.population == b.population

    def test_executor_identical(self):
        cfg = GaConfig.growing(seed=9, evaluation_budget=300)
        with ThreadPoolExecutor(2) as ex:
            a = run_ga(noisy_bias, cfg, executor=ex)
        b = run_ga(noisy_bias, cfg)
        assert a.population == b.population and a.evaluations == b.evaluations == 300

    def test_uneven_budget(self):
        tr = run_ga(noisy_bias, GaConfig(evaluation_budget=1003, seed=1))
        assert tr.evaluations == 1000 <= 1003

    def test_progress_callback(self):
        seen = []
        run_ga(constant, GaConfig(evaluation_budget=150), progress=lambda g, tr: seen.append(g))
        assert seen == list(range(1, 11))

    def test_csv(self, tmp_path):
        tr = run_ga(noisy_bias, GaConfig.growing(seed=10, evaluation_budget=200))
        p = tmp_path / "ga.csv"
        tr.write_csv(p)
        lines = p.read_text().splitlines()
        assert lines[0] == "# vlevo ga trace v1"
        rows = list(csv.DictReader(lines[1:]))
        assert len(rows) == 21
        assert list(rows[0]) == ["generation", "mean_fitness", "best_fitness", "best_type_count",
                                 "population_type_histogram"]
        assert float(rows[-1]["best_fitness"]) == tr.best_fitness[-1]
        assert sum(map(int, rows[5]["population_type_histogram"].split(";"))) == 20

    @settings(max_examples=25, deadline=None)
    @given(seed=st.integers(0, 10**6), p=st.sampled_from([0.0, 0.3, 0.5, 1.0]), k=st.sampled_from([1, 2]),
           budget=st.integers(100, 400))
    def test_invariants(self, seed, p, k, budget):
        cfg = GaConfig(seed=seed, p_add_type=p, types_added_per_event=k, evaluation_budget=budget)
        tr = run_ga(noisy_bias, cfg)
        assert np.all(np.diff(tr.best_fitness) <= 0)
        assert tr.evaluations <= budget
        for ind in tr.population:
            t = ind.treatment
            assert 1 <= t.n_types <= 10 and sum(t.worker_counts) == 50
            assert max(t.worker_counts) - min(t.worker_counts) <= 1
            for row in t.type_table():
                assert all(lo <= v <= hi for v, (_, lo, hi) in zip(row, NP_BOUNDS))
        if p == 0.0:
            assert all(ind.n_types == 1 for ind in tr.population)
        assert all(sum(h) == 20 for h in tr.type_histogram)


def test_tumor_evaluator_matches_simulator():
    from vlevo.tumor_sim import SimParams, apply_treatment

    fx = load_fixture()
    ev = TumorEvaluator(fx)
    t = Treatment([design()])
    assert ev(t, 5) == apply_treatment(fx, t, SimParams(), 3.0, 5)


def test_derive_seed():
    assert derive_seed(1, 2) == derive_seed(1, 2) != derive_seed(2, 1)
    assert 0 <= derive_seed(0, 0) < 2**63
