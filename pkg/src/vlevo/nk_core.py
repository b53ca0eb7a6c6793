"""NK fitness landscapes with growable genomes.

Each gene ``i`` reads its own allele plus the alleles of ``k`` linked genes
and looks the resulting ``k + 1`` bit pattern up in a per-gene table of
``2 ** (k + 1)`` values in [0, 1).  Genome fitness is the mean contribution.

Table index layout: the gene's own allele is bit 0, link ``t`` is bit
``t + 1`` (links in list order).

Generated landscapes do not materialise their tables.  Every gene owns a
random 64-bit key and entry ``idx`` is ``splitmix64(key + (idx + 1) * golden)``
scaled to [0, 1) with 53 bits of precision, i.e. a counter-based uniform
draw.  This keeps growth by large blocks at high ``k`` cheap.  Landscapes
built with :meth:`NkLandscape.from_tables` store dense tables instead and
draw dense rows for genes added later.

Growth follows a LIFO discipline: every :func:`add_genes` call pushes one
block record (size plus the first-link rewirings it made) so
:func:`remove_last_block` can restore the previous landscape exactly.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np
from numba import njit

FORMAT_MAGIC = "VLEVO-NK"
FORMAT_VERSION = 1
MAX_BRUTE_FORCE_GENES = 20

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)
_INV_2_53 = 1.0 / 9007199254740992.0


# ---------------------------------------------------------------------------
# jitted primitives (shared by the Python API and the walk kernel)
# ---------------------------------------------------------------------------

@njit(cache=True)
def hashed_entry(key, idx):
    z = key + np.uint64(idx + 1) * _GOLDEN
    z = (z ^ (z >> np.uint64(30))) * _MIX1
    z = (z ^ (z >> np.uint64(27))) * _MIX2
    z = z ^ (z >> np.uint64(31))
    return np.float64(z >> np.uint64(11)) * _INV_2_53


@njit(cache=True)
def _draw_key(rng):
    hi = np.uint64(rng.integers(0, 4294967296))
    lo = np.uint64(rng.integers(0, 4294967296))
    return (hi << np.uint64(32)) | lo


@njit(cache=True)
def gene_index(links, alleles, j, k):
    idx = np.int64(alleles[j])
    for t in range(k):
        idx |= np.int64(alleles[links[j, t]]) << (t + 1)
    return idx


@njit(cache=True)
def gene_contribution(links, keys, dense, alleles, j, k):
    idx = gene_index(links, alleles, j, k)
    if dense.shape[0] > 0:
        return dense[j, idx]
    return hashed_entry(keys[j], idx)


@njit(cache=True)
def genome_fitness(links, keys, dense, alleles, n, k):
    total = 0.0
    if dense.shape[0] > 0:
        for j in range(n):
            total += dense[j, gene_index(links, alleles, j, k)]
    else:
        for j in range(n):
            total += hashed_entry(keys[j], gene_index(links, alleles, j, k))
    return total / n


@njit(cache=True)
def _sample_links(rng, links, j, n_total, k, scratch):
    # partial Fisher-Yates over {0..n_total-1} \ {j}
    m = 0
    for c in range(n_total):
        if c != j:
            scratch[m] = c
            m += 1
    for t in range(k):
        r = t + rng.integers(0, m - t)
        tmp = scratch[t]
        scratch[t] = scratch[r]
        scratch[r] = tmp
        links[j, t] = scratch[t]


@njit(cache=True)
def _generate(rng, links, keys, n, k, scratch):
    for j in range(n):
        _sample_links(rng, links, j, n, k, scratch)
        keys[j] = _draw_key(rng)


@njit(cache=True)
def add_block(rng, links, keys, dense, alleles, counts, block_sizes, rewires, g, k, scratch):
    """Append ``g`` genes; ``counts`` is [n_genes, n_blocks, n_rewires]."""
    n_before = counts[0]
    n_after = n_before + g
    width = dense.shape[1]
    for t in range(g):
        m = n_before + t
        _sample_links(rng, links, m, n_after, k, scratch)
        if dense.shape[0] > 0:
            for e in range(width):
                dense[m, e] = rng.random()
        else:
            keys[m] = _draw_key(rng)
        alleles[m] = rng.integers(0, 2)
        if k >= 1:
            r = rng.integers(0, n_before)
            q = counts[2]
            rewires[q, 0] = r
            rewires[q, 1] = links[r, 0]
            rewires[q, 2] = m
            links[r, 0] = m
            counts[2] = q + 1
    block_sizes[counts[1]] = g
    counts[1] += 1
    counts[0] = n_after


@njit(cache=True)
def pop_block(links, counts, block_sizes, rewires, k):
    """Undo the newest block; its data stays in the buffers for :func:`redo_block`."""
    if counts[1] == 0:
        return False
    g = block_sizes[counts[1] - 1]
    if k >= 1:
        for q in range(counts[2] - 1, counts[2] - g - 1, -1):
            links[rewires[q, 0], 0] = rewires[q, 1]
        counts[2] -= g
    counts[1] -= 1
    counts[0] -= g
    return True


@njit(cache=True)
def redo_block(links, counts, block_sizes, rewires, k):
    g = block_sizes[counts[1]]
    counts[1] += 1
    counts[0] += g
    if k >= 1:
        for q in range(counts[2], counts[2] + g):
            links[rewires[q, 0], 0] = rewires[q, 2]
        counts[2] += g


@njit(cache=True)
def _brute_force(links, keys, dense, n, k):
    alleles = np.zeros(n, dtype=np.uint8)
    best_code = 0
    best = -1.0
    for code in range(1 << n):
        for j in range(n):
            alleles[j] = (code >> j) & 1
        f = genome_fitness(links, keys, dense, alleles, n, k)
        if f > best:
            best = f
            best_code = code
    return best_code, best


# ---------------------------------------------------------------------------
# Python API
# ---------------------------------------------------------------------------

@dataclass(eq=False)
class Genome:
    """Binary allele vector; always as long as its landscape."""

    alleles: np.ndarray

    def __post_init__(self):
        self.alleles = np.ascontiguousarray(self.alleles, dtype=np.uint8)

    def __len__(self):
        return int(self.alleles.shape[0])

    def __eq__(self, other):
        return isinstance(other, Genome) and np.array_equal(self.alleles, other.alleles)

    def copy(self) -> Genome:
        return Genome(self.alleles.copy())

    @classmethod
    def random(cls, n: int, rng: np.random.Generator) -> Genome:
        return cls(rng.integers(0, 2, size=n).astype(np.uint8))


class NkLandscape:
    """An NK landscape whose gene count can grow and shrink in blocks.

    Storage is capacity managed so the walk kernel can append genes without
    reallocating; only the first :attr:`n` rows of each buffer are live.
    """

    def __init__(self, n0: int, k: int, seed, links, keys, dense, counts, block_sizes, rewires):
        self.n0 = n0
        self.k = k
        self.seed = seed
        self._links = links
        self._keys = keys
        self._dense = dense
        self._counts = counts
        self._block_sizes = block_sizes
        self._rewires = rewires

    # construction ---------------------------------------------------------

    @classmethod
    def _empty(cls, n0, k, seed, capacity, dense_width=0):
        capacity = max(capacity, n0)
        return cls(
            n0,
            k,
            seed,
            np.zeros((capacity, k), dtype=np.int64),
            np.zeros(capacity, dtype=np.uint64),
            np.zeros((capacity if dense_width else 0, max(dense_width, 2 ** (k + 1))), dtype=np.float64),
            np.array([n0, 0, 0], dtype=np.int64),
            np.zeros(max(capacity, 8), dtype=np.int64),
            np.zeros((max(capacity, 8), 3), dtype=np.int64),
        )

    @classmethod
    def from_tables(cls, links, tables) -> NkLandscape:
        """Build a landscape from explicit links (n x k) and tables (n x 2^(k+1))."""
        tables = np.asarray(tables, dtype=np.float64)
        n, width = tables.shape
        links = np.asarray(links, dtype=np.int64).reshape(n, -1)
        k = links.shape[1]
        if width != 2 ** (k + 1):
            raise ValueError(f"tables need 2**(k+1)={2 ** (k + 1)} columns, got {width}")
        if np.any((tables < 0.0) | (tables > 1.0)):
            raise ValueError("table entries must lie in [0, 1]")
        for j in range(n):
            row = links[j]
            if np.any((row < 0) | (row >= n)) or np.any(row == j) or len(set(row.tolist())) != k:
                raise ValueError(f"gene {j} has invalid links {row.tolist()}")
        land = cls._empty(n, k, None, 2 * n + 8, dense_width=width)
        land._links[:n] = links
        land._dense[:n] = tables
        return land

    # basic views ------------------------------------------------------------

    @property
    def n(self) -> int:
        """Current gene count N'."""
        return int(self._counts[0])

    @property
    def is_dense(self) -> bool:
        return self._dense.shape[0] > 0

    @property
    def links(self) -> np.ndarray:
        return self._links[: self.n].copy()

    @property
    def keys(self) -> np.ndarray:
        return self._keys[: self.n].copy()

    def table(self, j: int) -> np.ndarray:
        """Materialise gene ``j``'s table (length 2^(k+1))."""
        if not 0 <= j < self.n:
            raise IndexError(j)
        if self.is_dense:
            return self._dense[j].copy()
        key = self._keys[j]
        return np.array([hashed_entry(key, e) for e in range(2 ** (self.k + 1))])

    @property
    def tables(self) -> np.ndarray:
        return np.stack([self.table(j) for j in range(self.n)])

    @property
    def history(self) -> list[tuple[int, list[tuple[int, int, int]]]]:
        """Growth blocks, oldest first: (size, [(gene, prior_target, new_target), ...])."""
        out = []
        q = 0
        for b in range(int(self._counts[1])):
            g = int(self._block_sizes[b])
            r = g if self.k >= 1 else 0
            out.append((g, [tuple(int(v) for v in row) for row in self._rewires[q : q + r]]))
            q += r
        return out

    def copy(self) -> NkLandscape:
        return NkLandscape(
            self.n0,
            self.k,
            self.seed,
            self._links.copy(),
            self._keys.copy(),
            self._dense.copy(),
            self._counts.copy(),
            self._block_sizes.copy(),
            self._rewires.copy(),
        )

    def __eq__(self, other):
        if not isinstance(other, NkLandscape):
            return NotImplemented
        n = self.n
        if (self.n0, self.k, self.seed, n, self.is_dense) != (other.n0, other.k, other.seed, other.n, other.is_dense):
            return False
        if not np.array_equal(self._links[:n], other._links[:n]):
            return False
        if self.is_dense:
            same_tables = np.array_equal(self._dense[:n], other._dense[:n])
        else:
            same_tables = np.array_equal(self._keys[:n], other._keys[:n])
        return same_tables and self.history == other.history

    def __repr__(self):
        return f"NkLandscape(n={self.n}, n0={self.n0}, k={self.k}, seed={self.seed}, blocks={int(self._counts[1])})"

    # capacity -----------------------------------------------------------------

    def reserve(self, extra_genes: int, extra_blocks: int = 1) -> None:
        """Make room for ``extra_genes`` more genes in ``extra_blocks`` more blocks."""
        need = self.n + extra_genes
        if need > self._links.shape[0]:
            cap = max(need, 2 * self._links.shape[0])
            self._links = _grow(self._links, cap)
            self._keys = _grow(self._keys, cap)
            if self.is_dense:
                self._dense = _grow(self._dense, cap)
        need_b = int(self._counts[1]) + extra_blocks
        if need_b > self._block_sizes.shape[0]:
            self._block_sizes = _grow(self._block_sizes, max(need_b, 2 * self._block_sizes.shape[0]))
        need_r = int(self._counts[2]) + extra_genes
        if need_r > self._rewires.shape[0]:
            self._rewires = _grow(self._rewires, max(need_r, 2 * self._rewires.shape[0]))

    def contributions(self, genome: Genome) -> np.ndarray:
        _check_length(self, genome)
        return np.array(
            [gene_contribution(self._links, self._keys, self._dense, genome.alleles, j, self.k) for j in range(self.n)]
        )


def _grow(arr, rows):
    out = np.zeros((rows,) + arr.shape[1:], dtype=arr.dtype)
    out[: arr.shape[0]] = arr
    return out


def _check_length(landscape, genome):
    if len(genome) != landscape.n:
        raise ValueError(f"genome length {len(genome)} does not match landscape gene count {landscape.n}")


def generate_landscape(n: int, k: int, seed: int) -> NkLandscape:
    """Random NK landscape: k distinct non-self links and a hashed table per gene."""
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    if k < 0 or k >= n:
        raise ValueError(f"k must satisfy 0 <= k <= n-1, got n={n}, k={k}")
    land = NkLandscape._empty(n, k, seed, 2 * n + 8)
    rng = np.random.default_rng(seed)
    _generate(rng, land._links, land._keys, n, k, np.empty(n, dtype=np.int64))
    return land


def evaluate(landscape: NkLandscape, genome: Genome) -> float:
    """Mean of the per-gene table lookups."""
    _check_length(landscape, genome)
    return float(
        genome_fitness(landscape._links, landscape._keys, landscape._dense, genome.alleles, landscape.n, landscape.k)
    )


def add_genes(landscape: NkLandscape, genome: Genome, g: int, rng: np.random.Generator) -> None:
    """Append ``g`` random genes to the right-hand end of landscape and genome.

    Each new gene links to ``k`` distinct genes of the grown genome and, when
    ``k >= 1``, takes over the first link of one uniformly chosen pre-existing
    gene.  New alleles are uniform random.
    """
    if g < 1:
        raise ValueError(f"g must be >= 1, got {g}")
    _check_length(landscape, genome)
    landscape.reserve(g)
    n_after = landscape.n + g
    buf = np.zeros(n_after, dtype=np.uint8)
    buf[: landscape.n] = genome.alleles
    add_block(
        rng,
        landscape._links,
        landscape._keys,
        landscape._dense,
        buf,
        landscape._counts,
        landscape._block_sizes,
        landscape._rewires,
        g,
        landscape.k,
        np.empty(n_after, dtype=np.int64),
    )
    genome.alleles = buf


def remove_last_block(landscape: NkLandscape, genome: Genome) -> bool:
    """Undo the most recent :func:`add_genes`.  Returns False (no-op) when there is none."""
    _check_length(landscape, genome)
    removed = pop_block(landscape._links, landscape._counts, landscape._block_sizes, landscape._rewires, landscape.k)
    if removed:
        genome.alleles = genome.alleles[: landscape.n].copy()
    return bool(removed)


def brute_force_optimum(landscape: NkLandscape, max_genes: int = MAX_BRUTE_FORCE_GENES) -> tuple[Genome, float]:
    """Exhaustive search; returns the first maximal genome in binary counting order."""
    n = landscape.n
    if n > max_genes:
        raise ValueError(f"{n} genes is too many for exhaustive enumeration (limit {max_genes})")
    code, best = _brute_force(landscape._links, landscape._keys, landscape._dense, n, landscape.k)
    alleles = np.array([(code >> j) & 1 for j in range(n)], dtype=np.uint8)
    return Genome(alleles), float(best)


def is_local_optimum(landscape: NkLandscape, genome: Genome) -> bool:
    """True iff no single-allele flip gives strictly greater fitness."""
    current = evaluate(landscape, genome)
    probe = genome.copy()
    for i in range(len(probe)):
        probe.alleles[i] ^= 1
        better = evaluate(landscape, probe) > current
        probe.alleles[i] ^= 1
        if better:
            return False
    return True


# ---------------------------------------------------------------------------
# serialisation
# ---------------------------------------------------------------------------

def save_landscape(landscape: NkLandscape, path) -> None:
    """Write an ``.npz`` archive (format ``VLEVO-NK`` v1, see README)."""
    n = landscape.n
    nb = int(landscape._counts[1])
    nr = int(landscape._counts[2])
    with open(path, "wb") as fh:
        np.savez(
            fh,
            magic=np.array(FORMAT_MAGIC),
            version=np.array(FORMAT_VERSION, dtype=np.int64),
            meta=np.array(
                [landscape.n0, landscape.k, -1 if landscape.seed is None else landscape.seed, n], dtype=np.int64
            ),
            links=landscape._links[:n],
            keys=landscape._keys[:n],
            dense=landscape._dense[:n] if landscape.is_dense else np.zeros((0, 2 ** (landscape.k + 1))),
            block_sizes=landscape._block_sizes[:nb],
            rewires=landscape._rewires[:nr],
        )


def load_landscape(path) -> NkLandscape:
    if not os.path.exists(path):
        raise FileNotFoundError(path)
    try:
        data = np.load(path, allow_pickle=False)
        magic = str(data["magic"])
        version = int(data["version"])
    except Exception as exc:
        raise ValueError(f"{path}: not a landscape archive ({exc})") from exc
    if magic != FORMAT_MAGIC:
        raise ValueError(f"{path}: bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise ValueError(f"{path}: unsupported landscape format version {version}")
    n0, k, seed, n = (int(v) for v in data["meta"])
    dense = data["dense"]
    land = NkLandscape._empty(n0, k, None if seed < 0 else seed, 2 * n + 8, dense_width=dense.shape[1] if len(dense) else 0)
    land.reserve(n - land.n, extra_blocks=len(data["block_sizes"]))
    land._links[:n] = data["links"]
    land._keys[:n] = data["keys"]
    if len(dense):
        land._dense[:n] = dense
    nb = len(data["block_sizes"])
    nr = len(data["rewires"])
    land._block_sizes[:nb] = data["block_sizes"]
    land._rewires[:nr] = data["rewires"]
    land._counts[:] = [n, nb, nr]
    return land
