"""Population-of-one adaptive walks on growable NK landscapes.

Every generation draws one mutation class (allele flip, add a block of
``g`` random genes, delete the newest block), builds the mutant in place and
keeps it iff its fitness is higher, or equal and a fair coin says so.
Rejected growth and deletion are rolled back exactly.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np
from numba import njit

from .nk_core import (
    Genome,
    NkLandscape,
    add_block,
    genome_fitness,
    pop_block,
    redo_block,
)

PROB_TOL = 1e-12


@dataclass(frozen=True)
class WalkConfig:
    generations: int = 20000
    g: int = 0
    p_allele: float = 1.0
    p_add: float = 0.0
    p_delete: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.generations < 0:
            raise ValueError(f"generations must be >= 0, got {self.generations}")
        if self.g < 0:
            raise ValueError(f"g must be >= 0, got {self.g}")
        probs = (self.p_allele, self.p_add, self.p_delete)
        if min(probs) < 0:
            raise ValueError(f"mutation probabilities must be nonnegative, got {probs}")
        if abs(sum(probs) - 1.0) > PROB_TOL:
            raise ValueError(f"mutation probabilities must sum to 1, got {sum(probs)!r}")
        if self.g == 0 and (self.p_add > 0 or self.p_delete > 0):
            raise ValueError("p_add and p_delete must be 0 for fixed-length walks (g=0)")

    @classmethod
    def growth(cls, g: int, **kw) -> WalkConfig:
        """Allele flip or growth with equal probability."""
        return cls(g=g, p_allele=0.5, p_add=0.5, p_delete=0.0, **kw)

    @classmethod
    def growth_deletion(cls, g: int, p_delete: float = 0.25, p_add: float = 0.25, **kw) -> WalkConfig:
        return cls(g=g, p_allele=1.0 - p_add - p_delete, p_add=p_add, p_delete=p_delete, **kw)


@dataclass
class WalkTrace:
    """Per-generation record of one walk.

    Index 0 of the series is the start point; index ``t`` is the state after
    generation ``t``.  Generation statistics are 1-based, 0 means "never".
    """

    fitness_series: np.ndarray
    length_series: np.ndarray
    accepted_growth_generations: list[int]
    walk_length_to_optimum: int
    length_stop_generation: int
    final_genome: Genome = field(repr=False)
    landscape: NkLandscape | None = field(default=None, repr=False)

    @property
    def final_fitness(self) -> float:
        return float(self.fitness_series[-1])

    @property
    def final_length(self) -> int:
        return int(self.length_series[-1])

    @property
    def generations(self) -> int:
        return len(self.fitness_series) - 1

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            fh.write("# vlevo walk trace v1\n")
            w = csv.writer(fh)
            w.writerow(["generation", "fitness", "length"])
            for t, (f, n) in enumerate(zip(self.fitness_series, self.length_series)):
                w.writerow([t, repr(float(f)), int(n)])


class WaitingTime(NamedTuple):
    mean: float | None  # None when no trace got there
    reached: int
    total: int


@njit(cache=True)
def accept_mutant(current, mutant, rng):
    if mutant > current:
        return True
    if mutant == current:
        return rng.random() < 0.5
    return False


@njit(cache=True)
def _flip_random(alleles, n, rng):
    i = rng.integers(0, n)
    alleles[i] ^= 1
    return i


@njit(cache=True)
def _walk_kernel(
    rng, links, keys, dense, alleles, counts, block_sizes, rewires, k, g,
    p_allele, p_add, start, generations, fit, length, growth_gens, stats, scratch,
):
    # stats: [n_growth_accepted, walk_length_to_optimum, length_stop_generation]
    cap = links.shape[0]
    current = fit[start - 1]
    for gen in range(start, generations + 1):
        if g > 0 and (
            counts[0] + g > cap
            or counts[1] + 1 > block_sizes.shape[0]
            or counts[2] + g > rewires.shape[0]
        ):
            return gen
        r = rng.random()
        n = counts[0]
        if r < p_allele:
            i = _flip_random(alleles, n, rng)
            mutant = genome_fitness(links, keys, dense, alleles, n, k)
            if accept_mutant(current, mutant, rng):
                if mutant > current:
                    stats[1] = gen
                current = mutant
            else:
                alleles[i] ^= 1
        elif r < p_allele + p_add:
            add_block(rng, links, keys, dense, alleles, counts, block_sizes, rewires, g, k, scratch)
            mutant = genome_fitness(links, keys, dense, alleles, counts[0], k)
            if accept_mutant(current, mutant, rng):
                if mutant > current:
                    stats[1] = gen
                current = mutant
                stats[2] = gen
                growth_gens[stats[0]] = gen
                stats[0] += 1
            else:
                pop_block(links, counts, block_sizes, rewires, k)
        elif counts[1] > 0:
            pop_block(links, counts, block_sizes, rewires, k)
            mutant = genome_fitness(links, keys, dense, alleles, counts[0], k)
            if accept_mutant(current, mutant, rng):
                if mutant > current:
                    stats[1] = gen
                current = mutant
                stats[2] = gen
            else:
                redo_block(links, counts, block_sizes, rewires, k)
        fit[gen] = current
        length[gen] = counts[0]
    return generations + 1


def run_walk(landscape: NkLandscape, config: WalkConfig, start: Genome | None = None) -> WalkTrace:
    """Run one adaptive walk on a private copy of ``landscape``.

    The start point is drawn from the walk RNG (seeded by ``config.seed``)
    unless given.  The caller's landscape is never modified.
    """
    land = landscape.copy()
    rng = np.random.default_rng(config.seed)
    genome = Genome.random(land.n, rng) if start is None else start.copy()
    if len(genome) != land.n:
        raise ValueError(f"start genome length {len(genome)} != landscape gene count {land.n}")

    if config.g > 0:
        land.reserve(64 * config.g, extra_blocks=64)
    alleles = np.zeros(land._links.shape[0], dtype=np.uint8)
    alleles[: land.n] = genome.alleles

    T = config.generations
    fit = np.empty(T + 1)
    length = np.empty(T + 1, dtype=np.int64)
    growth_gens = np.zeros(max(T, 1), dtype=np.int64)
    stats = np.zeros(3, dtype=np.int64)
    fit[0] = genome_fitness(land._links, land._keys, land._dense, alleles, land.n, land.k)
    length[0] = land.n

    gen = 1
    while gen <= T:
        gen = _walk_kernel(
            rng, land._links, land._keys, land._dense, alleles, land._counts, land._block_sizes, land._rewires,
            land.k, config.g, config.p_allele, config.p_add, gen, T, fit, length, growth_gens, stats,
            np.empty(land._links.shape[0], dtype=np.int64),
        )
        if gen <= T:
            land.reserve(max(64 * config.g, land.n), extra_blocks=max(64, int(land._counts[1])))
            grown = np.zeros(land._links.shape[0], dtype=np.uint8)
            grown[: alleles.shape[0]] = alleles
            alleles = grown

    return WalkTrace(
        fitness_series=fit,
        length_series=length,
        accepted_growth_generations=growth_gens[: stats[0]].tolist(),
        walk_length_to_optimum=int(stats[1]),
        length_stop_generation=int(stats[2]),
        final_genome=Genome(alleles[: land.n].copy()),
        landscape=land,
    )


def allele_mutation(genome: Genome, rng: np.random.Generator) -> tuple[int, int]:
    """Flip one uniformly chosen allele in place; returns (index, old allele) for undo."""
    if len(genome) == 0:
        raise ValueError("cannot mutate an empty genome")
    i = int(rng.integers(0, len(genome)))
    old = int(genome.alleles[i])
    genome.alleles[i] = old ^ 1
    return i, old


def accept(current: float, mutant: float, rng: np.random.Generator) -> bool:
    """Greater wins; ties are a fair coin flip."""
    return bool(accept_mutant(float(current), float(mutant), rng))


def waiting_time_stats(traces: Sequence[WalkTrace], j: int) -> WaitingTime:
    """Mean generation at which the ``j``-th growth event was accepted (1-based ``j``)."""
    if j < 1:
        raise ValueError(f"j is 1-based, got {j}")
    if not traces:
        raise ValueError("no traces given")
    hits = [t.accepted_growth_generations[j - 1] for t in traces if len(t.accepted_growth_generations) >= j]
    mean = float(np.mean(hits)) if hits else None
    return WaitingTime(mean, len(hits), len(traces))
