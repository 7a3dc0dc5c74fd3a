"""
Genetic algorithm over latent vectors.

Each generation: evaluate, record statistics, set the elite aside, select a
breeding pool by tournaments, recombine consecutive pairs, add fresh random
immigrants, mutate everything but the elite, then re-append the elite.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, List, Optional, Tuple

import numpy as np
import numpy.typing as npt
from pydantic import BaseModel, ConfigDict, Field, model_validator

from exceptions import DimensionMismatchError, FitnessRangeError, ValidationError
from rng import MAX_SEED, RandomStreams

logger = logging.getLogger(__name__)

FitnessFn = Callable[[np.ndarray], float]

# evaluate random-baseline latents in blocks of this many rows
BASELINE_CHUNK = 1024


class EvolutionConfig(BaseModel):
    """GA parameters; defaults are the desk-scale best cell."""
    model_config = ConfigDict(extra="forbid", frozen=True)

    pop_size: int = Field(50, ge=1, description="N_pop")
    n_generations: int = Field(100, ge=1, description="N_gen")
    n_elite: int = Field(1, ge=1, description="N_elite")
    n_new: int = Field(10, ge=1, description="N_new immigrants per generation")
    tournament_size: int = Field(3, ge=1, description="N_ts")
    p_cx: float = Field(0.9, ge=0.0, le=1.0, description="Crossover rate per pair")
    p_mut: float = Field(0.2, ge=0.0, le=1.0, description="Mutation rate per individual")
    per_gene_mut_prob: float = Field(0.5, ge=0.0, le=1.0)
    latent_dim: int = Field(16, ge=1, description="l")
    seed: int = Field(0, ge=0, le=MAX_SEED)
    target: int = Field(0, ge=0, description="Target style component t")

    @model_validator(mode="after")
    def _check_budget(self):
        if self.n_elite + self.n_new >= self.pop_size:
            raise ValueError(
                f"n_elite + n_new ({self.n_elite} + {self.n_new}) must be < pop_size ({self.pop_size})"
            )
        return self

    @property
    def n_selected(self) -> int:
        return self.pop_size - self.n_elite - self.n_new


@dataclass(frozen=True)
class GenerationStats:
    generation: int
    max_fitness: float
    mean_fitness: float
    best_individual_index: int


@dataclass(frozen=True, eq=False)
class EvolutionResult:
    stats: List[GenerationStats]
    best_latent: np.ndarray
    best_fitness: float

    @property
    def max_fitness(self) -> np.ndarray:
        return np.array([s.max_fitness for s in self.stats])

    @property
    def mean_fitness(self) -> np.ndarray:
        return np.array([s.mean_fitness for s in self.stats])


@dataclass(frozen=True, eq=False)
class BaselineResult:
    budget: int
    best_fitness: float
    best_latent: np.ndarray


def _fitness_order(fitnesses: np.ndarray) -> np.ndarray:
    """Indices from fittest to least fit; equal fitness goes to the lower index."""
    return np.lexsort((np.arange(fitnesses.size), -fitnesses))


def init_population(cfg: EvolutionConfig, rng: np.random.Generator) -> np.ndarray:
    """N_pop x l matrix of standard-normal genes."""
    return rng.standard_normal((cfg.pop_size, cfg.latent_dim))


def tournament_select(population: npt.ArrayLike, fitnesses: npt.ArrayLike, count: int,
                      tournament_size: int, rng: np.random.Generator) -> np.ndarray:
    """
    Run ``count`` tournaments and return copies of the winners.

    Contestants are drawn uniformly with replacement; the fittest wins and
    ties go to the lowest population index.
    """
    pop = np.asarray(population, dtype=np.float64)
    fit = np.asarray(fitnesses, dtype=np.float64)
    if pop.ndim != 2 or pop.shape[0] == 0:
        raise ValidationError("cannot select from an empty population")
    if fit.shape != (pop.shape[0],):
        raise DimensionMismatchError("fitness vector", pop.shape[0], fit.shape)
    if count < 1 or tournament_size < 1:
        raise ValidationError("count and tournament_size must be >= 1")

    rank = np.empty(fit.size, dtype=np.int64)
    rank[_fitness_order(fit)] = np.arange(fit.size)

    draws = rng.integers(0, pop.shape[0], size=(count, tournament_size))
    winners = draws[np.arange(count), np.argmin(rank[draws], axis=1)]
    return pop[winners].copy()


def uniform_crossover(a: npt.ArrayLike, b: npt.ArrayLike,
                      rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray]:
    """Per gene, keep or swap the parents' values with probability 0.5."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise DimensionMismatchError("crossover parents", a.shape, b.shape)
    alpha = rng.random(a.size) < 0.5
    return np.where(alpha, a, b), np.where(alpha, b, a)


def nonuniform_mutate(z: npt.ArrayLike, per_gene_prob: float,
                      rng: np.random.Generator) -> np.ndarray:
    """Add N(0, 1) noise to each gene independently with probability ``per_gene_prob``."""
    if not 0.0 <= per_gene_prob <= 1.0:
        raise ValidationError(f"per_gene_prob must be in [0, 1], got {per_gene_prob}")
    z = np.asarray(z, dtype=np.float64)
    mask = rng.random(z.size) < per_gene_prob
    noise = rng.standard_normal(z.size)
    return np.where(mask, z + noise, z)


def recombine_pairs(pool: np.ndarray, p_cx: float, rng: np.random.Generator) -> np.ndarray:
    """Cross consecutive pairs with probability p_cx each; an odd last row passes through."""
    pool = np.array(pool, dtype=np.float64)
    for i in range(0, pool.shape[0] - 1, 2):
        if rng.random() < p_cx:
            pool[i], pool[i + 1] = uniform_crossover(pool[i], pool[i + 1], rng)
    return pool


class FitnessEvaluator:
    """Scores a population, optionally on a thread pool; order is always preserved."""

    def __init__(self, fitness_fn: FitnessFn, workers: int = 1):
        self.fitness_fn = fitness_fn
        self.workers = max(1, int(workers))
        self.executor: Optional[ThreadPoolExecutor] = None
        if self.workers > 1:
            self.executor = ThreadPoolExecutor(max_workers=self.workers)

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def close(self) -> None:
        if self.executor is not None:
            self.executor.shutdown(wait=True)
            self.executor = None

    def __call__(self, population: np.ndarray) -> np.ndarray:
        rows = list(population)
        if self.executor is None:
            values = [self.fitness_fn(row) for row in rows]
        else:
            values = list(self.executor.map(self.fitness_fn, rows))
        fitnesses = np.asarray(values, dtype=np.float64)
        bad = ~((fitnesses >= 0.0) & (fitnesses <= 1.0))
        if np.any(bad):
            raise FitnessRangeError(
                f"fitness must lie in [0, 1]; got {fitnesses[bad][0]!r} for individual "
                f"{int(np.flatnonzero(bad)[0])}"
            )
        return fitnesses


def evolve(cfg: EvolutionConfig, fitness_fn: FitnessFn, workers: int = 1) -> EvolutionResult:
    """Maximize ``fitness_fn`` over latent vectors; returns statistics and the best-ever individual."""
    streams = RandomStreams(cfg.seed)
    init_rng = streams.stream("init")
    selection_rng = streams.stream("selection")
    crossover_rng = streams.stream("crossover")
    mutation_rng = streams.stream("mutation")
    immigrant_rng = streams.stream("immigrants")

    population = init_population(cfg, init_rng)
    stats: List[GenerationStats] = []
    best_latent = population[0].copy()
    best_fitness = -np.inf

    with FitnessEvaluator(fitness_fn, workers) as evaluate:
        for generation in range(cfg.n_generations):
            fitnesses = evaluate(population)
            order = _fitness_order(fitnesses)
            leader = int(order[0])
            stats.append(GenerationStats(
                generation=generation,
                max_fitness=float(fitnesses[leader]),
                mean_fitness=float(fitnesses.mean()),
                best_individual_index=leader,
            ))
            if fitnesses[leader] > best_fitness:
                best_fitness = float(fitnesses[leader])
                best_latent = population[leader].copy()
            logger.debug(
                f"generation {generation}: max {stats[-1].max_fitness:.6f} "
                f"mean {stats[-1].mean_fitness:.6f}"
            )
            if generation == cfg.n_generations - 1:
                break

            elite = population[order[:cfg.n_elite]].copy()
            pool = tournament_select(
                population, fitnesses, cfg.n_selected, cfg.tournament_size, selection_rng
            )
            pool = recombine_pairs(pool, cfg.p_cx, crossover_rng)
            immigrants = immigrant_rng.standard_normal((cfg.n_new, cfg.latent_dim))
            offspring = np.vstack([pool, immigrants])
            for i in range(offspring.shape[0]):
                if mutation_rng.random() < cfg.p_mut:
                    offspring[i] = nonuniform_mutate(offspring[i], cfg.per_gene_mut_prob, mutation_rng)
            population = np.vstack([offspring, elite])

    logger.info(
        f"Evolution for target {cfg.target} finished: best fitness {best_fitness:.6f} "
        f"after {cfg.n_generations} generation(s)"
    )
    return EvolutionResult(stats=stats, best_latent=best_latent, best_fitness=best_fitness)


def random_baseline(cfg: EvolutionConfig, fitness_fn: FitnessFn, budget: Optional[int] = None,
                    workers: int = 1) -> BaselineResult:
    """Fittest of ``budget`` (default N_pop * N_gen) i.i.d. standard-normal latents."""
    budget = cfg.pop_size * cfg.n_generations if budget is None else int(budget)
    if budget < 1:
        raise ValidationError(f"baseline budget must be >= 1, got {budget}")

    rng = RandomStreams(cfg.seed).stream("baseline")
    best_fitness = -np.inf
    best_latent = None
    with FitnessEvaluator(fitness_fn, workers) as evaluate:
        for start in range(0, budget, BASELINE_CHUNK):
            latents = rng.standard_normal((min(BASELINE_CHUNK, budget - start), cfg.latent_dim))
            fitnesses = evaluate(latents)
            leader = int(np.argmax(fitnesses))
            if fitnesses[leader] > best_fitness:
                best_fitness = float(fitnesses[leader])
                best_latent = latents[leader].copy()

    logger.info(f"Random baseline for target {cfg.target}: best fitness {best_fitness:.6f} of {budget}")
    return BaselineResult(budget=budget, best_fitness=best_fitness, best_latent=best_latent)
