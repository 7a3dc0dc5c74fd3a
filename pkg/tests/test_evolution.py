import math

import numpy as np
import pytest
from pydantic import ValidationError as PydanticValidationError

from evolution import (
    EvolutionConfig,
    evolve,
    init_population,
    nonuniform_mutate,
    random_baseline,
    recombine_pairs,
    tournament_select,
    uniform_crossover,
)
from exceptions import DimensionMismatchError, FitnessRangeError, ValidationError
from rng import RandomStreams


def sigmoid_first_gene(z):
    return 1.0 / (1.0 + math.exp(-z[0]))


def _config(**overrides):
    values = dict(pop_size=30, n_generations=15, n_elite=1, n_new=5, tournament_size=3,
                  p_cx=0.9, p_mut=0.2, latent_dim=6, seed=1)
    values.update(overrides)
    return EvolutionConfig(**values)


class TestEvolutionConfig:

    def test_defaults(self):
        cfg = EvolutionConfig()
        assert (cfg.n_elite, cfg.n_new, cfg.per_gene_mut_prob) == (1, 10, 0.5)
        assert cfg.n_selected == cfg.pop_size - 11

    def test_elite_and_immigrants_must_leave_room(self):
        with pytest.raises(PydanticValidationError):
            EvolutionConfig(pop_size=11, n_elite=1, n_new=10)

    @pytest.mark.parametrize("field, value", [("p_cx", 1.5), ("p_mut", -0.1), ("tournament_size", 0)])
    def test_rejects_out_of_range(self, field, value):
        with pytest.raises(PydanticValidationError):
            EvolutionConfig(**{field: value})


class TestInitPopulation:

    def test_reproducible(self):
        cfg = _config(pop_size=200, latent_dim=16)
        a = init_population(cfg, RandomStreams(5).stream("init"))
        b = init_population(cfg, RandomStreams(5).stream("init"))
        np.testing.assert_array_equal(a, b)
        assert a.shape == (200, 16)

    def test_standard_normal_moments(self):
        pop = init_population(_config(pop_size=200, latent_dim=16), np.random.default_rng(6))
        assert abs(pop.mean()) < 0.1
        assert abs(pop.var() - 1.0) < 0.15


class TestTournamentSelect:

    def test_large_tournaments_pick_the_global_best(self):
        pop = np.arange(5, dtype=float).reshape(-1, 1)
        fit = np.array([0.2, 0.9, 0.4, 0.1, 0.3])
        winners = tournament_select(pop, fit, 50, 200, np.random.default_rng(0))
        np.testing.assert_array_equal(winners[:, 0], 1.0)

    def test_ties_go_to_lowest_index(self):
        pop = np.arange(3, dtype=float).reshape(-1, 1)
        winners = tournament_select(pop, np.full(3, 0.5), 20, 200, np.random.default_rng(1))
        np.testing.assert_array_equal(winners[:, 0], 0.0)

    def test_single_contestant_is_uniform(self):
        pop = np.arange(4, dtype=float).reshape(-1, 1)
        winners = tournament_select(pop, np.array([0.9, 0.1, 0.5, 0.3]), 10_000, 1, np.random.default_rng(2))
        freq = np.bincount(winners[:, 0].astype(int), minlength=4) / 10_000
        np.testing.assert_allclose(freq, 0.25, atol=0.02)

    def test_pair_tournament_probability(self):
        pop = np.array([[0.0], [1.0]])
        winners = tournament_select(pop, np.array([0.9, 0.1]), 10_000, 2, np.random.default_rng(3))
        assert np.mean(winners[:, 0] == 0.0) == pytest.approx(0.75, abs=0.02)

    def test_returns_copies(self):
        pop = np.zeros((3, 2))
        winners = tournament_select(pop, np.array([0.1, 0.2, 0.3]), 4, 2, np.random.default_rng(4))
        winners += 1.0
        np.testing.assert_array_equal(pop, 0.0)

    def test_empty_population(self):
        with pytest.raises(ValidationError):
            tournament_select(np.empty((0, 3)), np.empty(0), 1, 2, np.random.default_rng(5))

    def test_misaligned_fitness(self):
        with pytest.raises(DimensionMismatchError):
            tournament_select(np.zeros((3, 2)), np.zeros(2), 1, 2, np.random.default_rng(6))


class TestUniformCrossover:

    def test_identical_parents(self):
        a = np.random.default_rng(7).standard_normal(8)
        c1, c2 = uniform_crossover(a, a.copy(), np.random.default_rng(8))
        np.testing.assert_array_equal(c1, a)
        np.testing.assert_array_equal(c2, a)

    def test_children_are_complementary(self):
        rng = np.random.default_rng(9)
        a, b = rng.standard_normal(50), rng.standard_normal(50)
        c1, c2 = uniform_crossover(a, b, rng)
        for i in range(50):
            assert sorted((c1[i], c2[i])) == sorted((a[i], b[i]))

    def test_gene_source_fraction(self):
        a, b = np.zeros(10_000), np.ones(10_000)
        c1, _ = uniform_crossover(a, b, np.random.default_rng(10))
        assert 0.45 <= np.mean(c1 == 0.0) <= 0.55

    def test_length_mismatch(self):
        with pytest.raises(DimensionMismatchError):
            uniform_crossover(np.zeros(3), np.zeros(4), np.random.default_rng(11))


class TestNonuniformMutate:

    def test_zero_probability_leaves_vector(self):
        z = np.random.default_rng(12).standard_normal(100)
        np.testing.assert_array_equal(nonuniform_mutate(z, 0.0, np.random.default_rng(13)), z)

    def test_forced_mutation_is_half_normal(self):
        z = np.zeros(10_000)
        delta = nonuniform_mutate(z, 1.0, np.random.default_rng(14)) - z
        assert np.mean(np.abs(delta)) == pytest.approx(math.sqrt(2 / math.pi), abs=0.03)

    def test_half_of_the_genes_change(self):
        z = np.zeros(10_000)
        changed = np.mean(nonuniform_mutate(z, 0.5, np.random.default_rng(15)) != z)
        assert 0.47 <= changed <= 0.53

    def test_does_not_modify_input(self):
        z = np.ones(10)
        nonuniform_mutate(z, 1.0, np.random.default_rng(16))
        np.testing.assert_array_equal(z, 1.0)

    def test_rejects_bad_probability(self):
        with pytest.raises(ValidationError):
            nonuniform_mutate(np.zeros(3), 1.5, np.random.default_rng(17))


class TestRecombinePairs:

    def test_genes_come_from_the_pair(self):
        rng = np.random.default_rng(18)
        pool = rng.standard_normal((9, 5))
        children = recombine_pairs(pool, 1.0, np.random.default_rng(19))
        for j in range(0, 8, 2):
            for i in range(5):
                assert children[j, i] in (pool[j, i], pool[j + 1, i])
                assert children[j + 1, i] in (pool[j, i], pool[j + 1, i])
        np.testing.assert_array_equal(children[8], pool[8])

    def test_no_crossover_at_zero_rate(self):
        pool = np.random.default_rng(20).standard_normal((6, 4))
        np.testing.assert_array_equal(recombine_pairs(pool, 0.0, np.random.default_rng(21)), pool)


class TestEvolve:

    def test_constant_fitness(self):
        result = evolve(_config(), lambda z: 0.5)
        assert len(result.stats) == 15
        for s in result.stats:
            assert s.max_fitness == 0.5 and s.mean_fitness == 0.5
        assert result.best_fitness == 0.5

    def test_climbs_monotone_objective(self):
        cfg = EvolutionConfig(pop_size=50, n_generations=100, latent_dim=16, seed=7,
                              p_cx=0.9, p_mut=0.2, tournament_size=3)
        result = evolve(cfg, sigmoid_first_gene)
        assert result.best_fitness >= 0.999

    def test_max_fitness_never_decreases(self):
        centre = np.linspace(-1, 1, 6)

        def bump(z):
            return float(np.exp(-np.sum((z - centre) ** 2) / 12.0))

        for seed in range(10):
            for fn in (bump, sigmoid_first_gene):
                result = evolve(_config(seed=seed), fn)
                assert np.all(np.diff(result.max_fitness) >= 0.0)
                assert result.best_fitness == result.stats[-1].max_fitness

    def test_stats_are_consistent(self):
        result = evolve(_config(), sigmoid_first_gene)
        for g, s in enumerate(result.stats):
            assert s.generation == g
            assert 0.0 <= s.mean_fitness <= s.max_fitness <= 1.0
            assert 0 <= s.best_individual_index < 30
        assert sigmoid_first_gene(result.best_latent) == result.best_fitness

    def test_population_size_is_conserved(self):
        calls = []
        evolve(_config(), lambda z: calls.append(z.shape) or 0.3)
        assert len(calls) == 30 * 15
        assert set(calls) == {(6,)}

    def test_elite_survives_unmodified(self):
        seen = []

        def record(z):
            seen.append(z.copy())
            return sigmoid_first_gene(z)

        cfg = _config(n_generations=6)
        result = evolve(cfg, record)
        generations = np.array(seen).reshape(6, 30, 6)
        for g in range(5):
            leader = generations[g, result.stats[g].best_individual_index]
            # elites are appended after the offspring
            np.testing.assert_array_equal(generations[g + 1, -1], leader)

    def test_reproducible_and_independent_of_workers(self):
        first = evolve(_config(seed=3), sigmoid_first_gene)
        second = evolve(_config(seed=3), sigmoid_first_gene)
        threaded = evolve(_config(seed=3), sigmoid_first_gene, workers=4)
        for other in (second, threaded):
            np.testing.assert_array_equal(first.max_fitness, other.max_fitness)
            np.testing.assert_array_equal(first.mean_fitness, other.mean_fitness)
            np.testing.assert_array_equal(first.best_latent, other.best_latent)

    @pytest.mark.parametrize("value", [1.5, -0.1, float("nan")])
    def test_rejects_fitness_outside_unit_interval(self, value):
        with pytest.raises(FitnessRangeError):
            evolve(_config(), lambda z: value)


class TestRandomBaseline:

    def test_constant_fitness(self):
        result = random_baseline(_config(), lambda z: 0.5)
        assert result.best_fitness == 0.5
        assert result.budget == 30 * 15

    def test_budget_of_one(self):
        cfg = _config(seed=42)
        result = random_baseline(cfg, sigmoid_first_gene, budget=1)
        z = RandomStreams(42).stream("baseline").standard_normal((1, 6))[0]
        assert result.best_fitness == sigmoid_first_gene(z)
        np.testing.assert_array_equal(result.best_latent, z)

    def test_extreme_value_of_sigmoid(self):
        cfg = _config(pop_size=50, n_generations=100, latent_dim=16, seed=8)
        result = random_baseline(cfg, sigmoid_first_gene)
        assert result.budget == 5000
        assert 0.95 <= result.best_fitness <= 0.995

    def test_rejects_empty_budget(self):
        with pytest.raises(ValidationError):
            random_baseline(_config(), lambda z: 0.5, budget=0)
