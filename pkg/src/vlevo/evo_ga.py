"""Steady-state GA over nanoparticle treatments (fixed or variable length).

Fitness is minimised (remaining cancer cells).  Each individual is scored
once at birth by static sampling and the score is cached.  One generation
makes one offspring: tournament-select a parent, clone and mutate it,
evaluate it, then pick a victim by inverse tournament and replace it only if
the offspring is strictly better.

Budget accounting is in evaluator calls.  The initial population costs
``population_size * samples_per_evaluation`` calls and every generation
costs ``samples_per_evaluation`` more, so the defaults (1000 calls, P=20,
5 samples) give 180 generations.
"""

from __future__ import annotations

import csv
import dataclasses
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .tumor_sim import MAX_TYPES, NP_BOUNDS, NpDesign, SimParams, SimState, Treatment, apply_treatment

Evaluator = Callable[[Treatment, int], float]

N_PARAMS = len(NP_BOUNDS)


def derive_seed(*parts: int) -> int:
    """Stable 63-bit seed from a tuple of non-negative ints."""
    state = np.random.SeedSequence([int(p) for p in parts]).generate_state(1, np.uint64)[0]
    return int(state >> np.uint64(1))


@dataclass(frozen=True)
class GaConfig:
    population_size: int = 20
    tournament_size: int = 2
    evaluation_budget: int = 1000
    samples_per_evaluation: int = 5
    mutation_step_fraction: float = 0.05
    p_add_type: float = 0.0
    types_added_per_event: int = 1
    max_types: int = MAX_TYPES
    seed: int = 0

    def __post_init__(self):
        if self.population_size < 1:
            raise ValueError("population_size must be >= 1")
        if not 1 <= self.tournament_size <= self.population_size:
            raise ValueError("tournament_size must be in [1, population_size]")
        if self.samples_per_evaluation < 1:
            raise ValueError("samples_per_evaluation must be >= 1")
        if not 0.0 <= self.p_add_type <= 1.0:
            raise ValueError(f"p_add_type must be in [0, 1], got {self.p_add_type}")
        if not 0.0 <= self.mutation_step_fraction <= 1.0:
            raise ValueError("mutation_step_fraction must be in [0, 1]")
        if self.types_added_per_event < 1:
            raise ValueError("types_added_per_event must be >= 1")
        if not 1 <= self.max_types <= MAX_TYPES:
            raise ValueError(f"max_types must be in [1, {MAX_TYPES}]")
        if self.seed < 0:
            raise ValueError("seed must be >= 0")
        if self.evaluation_budget < self.init_cost:
            raise ValueError(
                f"evaluation_budget={self.evaluation_budget} cannot pay for the initial population "
                f"({self.population_size} x {self.samples_per_evaluation} = {self.init_cost} calls)"
            )

    @classmethod
    def fixed(cls, **kw) -> GaConfig:
        return cls(p_add_type=0.0, **kw)

    @classmethod
    def growing(cls, types_added_per_event: int = 1, **kw) -> GaConfig:
        return cls(p_add_type=0.5, types_added_per_event=types_added_per_event, **kw)

    @property
    def init_cost(self) -> int:
        return self.population_size * self.samples_per_evaluation

    @property
    def generations(self) -> int:
        return (self.evaluation_budget - self.init_cost) // self.samples_per_evaluation

    @property
    def evaluator_calls(self) -> int:
        """Calls actually made; equals the budget when it divides evenly."""
        return self.init_cost + self.generations * self.samples_per_evaluation


@dataclass(frozen=True)
class Individual:
    treatment: Treatment
    sampled_fitness: float | None = None  # None until evaluated

    def __post_init__(self):
        f = self.sampled_fitness
        if f is not None and not (np.isfinite(f) and f >= 0):
            raise ValueError(f"sampled_fitness must be finite and >= 0, got {f!r}")

    @property
    def n_types(self) -> int:
        return self.treatment.n_types


@dataclass
class GaTrace:
    """Per-generation record; row 0 is the initial population."""

    mean_fitness: list = field(default_factory=list)
    best_fitness: list = field(default_factory=list)
    best_type_count: list = field(default_factory=list)
    type_histogram: list = field(default_factory=list)  # counts for 1..max_types types
    evaluations: int = 0
    replacements: int = 0
    population: list = field(default_factory=list)
    config: GaConfig | None = None

    def record(self, population: Sequence[Individual], max_types: int) -> None:
        fit = np.array([ind.sampled_fitness for ind in population])
        b = int(np.argmin(fit))
        hist = np.bincount([ind.n_types for ind in population], minlength=max_types + 1)[1:]
        self.mean_fitness.append(float(fit.mean()))
        self.best_fitness.append(float(fit[b]))
        self.best_type_count.append(population[b].n_types)
        self.type_histogram.append([int(c) for c in hist])

    @property
    def best(self) -> Individual:
        fit = [ind.sampled_fitness for ind in self.population]
        return self.population[int(np.argmin(fit))]

    @property
    def generations(self) -> int:
        return len(self.best_fitness) - 1

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            fh.write("# vlevo ga trace v1\n")
            w = csv.writer(fh)
            w.writerow(["generation", "mean_fitness", "best_fitness", "best_type_count",
                        "population_type_histogram"])
            for g, row in enumerate(zip(self.mean_fitness, self.best_fitness, self.best_type_count,
                                        self.type_histogram)):
                mean, best, count, hist = row
                w.writerow([g, repr(mean), repr(best), count, ";".join(map(str, hist))])


@dataclass
class TumorEvaluator:
    """Remaining live cells after a treatment on a fixed tumour."""

    tumor: SimState | None = None
    params: SimParams = field(default_factory=SimParams)
    days: float = 3.0

    def __post_init__(self):
        if self.tumor is None:
            from .tumor_sim import load_fixture

            self.tumor = load_fixture()

    def __call__(self, treatment: Treatment, seed: int) -> float:
        return float(apply_treatment(self.tumor, treatment, self.params, self.days, seed))


def evaluate_static(evaluator: Evaluator, treatment: Treatment, samples: int, seed: int,
                    executor=None) -> float:
    """Mean of ``samples`` evaluator calls seeded by (seed, sample index).

    With an ``executor`` (anything with an ordered ``map``) the calls may run
    concurrently; results are combined in sample order either way.
    """
    if samples < 1:
        raise ValueError("samples must be >= 1")
    seeds = [derive_seed(seed, i) for i in range(samples)]
    if executor is None:
        values = [evaluator(treatment, s) for s in seeds]
    else:
        values = list(executor.map(evaluator, [treatment] * samples, seeds))
    return float(np.mean(values))


def tournament(fitness: Sequence[float], t: int, rng: np.random.Generator, direction: str = "best") -> int:
    """Index of the best (lowest) or worst of ``t`` distinct random members.

    Ties go to the member drawn first.
    """
    if direction not in ("best", "worst"):
        raise ValueError(f"direction must be 'best' or 'worst', got {direction!r}")
    fit = np.asarray(fitness, dtype=float)
    if not 1 <= t <= len(fit):
        raise ValueError(f"tournament size {t} not in [1, {len(fit)}]")
    idx = rng.choice(len(fit), size=t, replace=False)
    vals = fit[idx]
    k = np.argmin(vals) if direction == "best" else np.argmax(vals)
    return int(idx[k])


def perturb(treatment: Treatment, type_index: int, param_index: int, delta_fraction: float) -> Treatment:
    """Shift one parameter by ``delta_fraction`` of its range, clamped to bounds."""
    name, lo, hi = NP_BOUNDS[param_index]
    design = treatment.np_types[type_index]
    value = float(np.clip(getattr(design, name) + delta_fraction * (hi - lo), lo, hi))
    types = list(treatment.np_types)
    types[type_index] = dataclasses.replace(design, **{name: value})
    return Treatment(types)


def mutate(individual: Individual, config: GaConfig, rng: np.random.Generator) -> Individual:
    """Clone-and-mutate; the child comes back unevaluated.

    An add event that would overshoot ``max_types`` is consumed (child is an
    unchanged copy).
    """
    t = individual.treatment
    if config.p_add_type > 0 and rng.random() < config.p_add_type:
        k = config.types_added_per_event
        if t.n_types + k > config.max_types:
            return Individual(t)
        extra = [NpDesign.random(rng) for _ in range(k)]
        return Individual(Treatment(t.np_types + tuple(extra)))
    gene = int(rng.integers(t.n_types * N_PARAMS))
    step = rng.uniform(-config.mutation_step_fraction, config.mutation_step_fraction)
    return Individual(perturb(t, gene // N_PARAMS, gene % N_PARAMS, step))


def initial_population(config: GaConfig) -> list[Treatment]:
    """Random single-type treatments.  Depends on the seed only, so fixed and
    growing arms with one seed start from the same population."""
    rng = np.random.default_rng(np.random.SeedSequence(config.seed).spawn(2)[0])
    return [Treatment([NpDesign.random(rng)]) for _ in range(config.population_size)]


class _Counter:
    def __init__(self, evaluator):
        self.evaluator = evaluator
        self.calls = 0

    def __call__(self, treatment, seed):
        self.calls += 1
        return self.evaluator(treatment, seed)


def run_ga(evaluator: Evaluator, config: GaConfig, initial: Sequence[Treatment] | None = None,
           executor=None, progress: Callable[[int, GaTrace], None] | None = None) -> GaTrace:
    """Run the steady-state GA until the evaluation budget is spent.

    Evaluation ``j`` (initial individuals first, then one per generation) is
    sampled with seed ``derive_seed(config.seed, j)``.  Arms that share a
    seed therefore share the initial scores as well as the population.
    """
    initial = initial_population(config) if initial is None else list(initial)
    if len(initial) != config.population_size:
        raise ValueError(f"initial population has {len(initial)} members, expected {config.population_size}")
    for t in initial:
        if t.n_types > config.max_types:
            raise ValueError("initial treatment exceeds max_types")
    rng = np.random.default_rng(np.random.SeedSequence(config.seed).spawn(2)[1])
    counter = _Counter(evaluator)
    samples = config.samples_per_evaluation

    def score(treatment, j):
        if executor is None:
            return evaluate_static(counter, treatment, samples, derive_seed(config.seed, j))
        f = evaluate_static(evaluator, treatment, samples, derive_seed(config.seed, j), executor)
        counter.calls += samples
        return f

    pop = [Individual(t, score(t, j)) for j, t in enumerate(initial)]
    trace = GaTrace(config=config)
    trace.record(pop, config.max_types)
    for g in range(1, config.generations + 1):
        fit = [ind.sampled_fitness for ind in pop]
        parent = tournament(fit, config.tournament_size, rng, "best")
        child = mutate(pop[parent], config, rng)
        child = Individual(child.treatment, score(child.treatment, config.population_size + g - 1))
        victim = tournament(fit, config.tournament_size, rng, "worst")
        if child.sampled_fitness < pop[victim].sampled_fitness:
            pop[victim] = child
            trace.replacements += 1
        trace.record(pop, config.max_types)
        if progress is not None:
            progress(g, trace)
    trace.evaluations = counter.calls
    trace.population = pop
    assert trace.evaluations == config.evaluator_calls <= config.evaluation_budget
    return trace
