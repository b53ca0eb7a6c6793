"""Parameter records for the tumour / nanoparticle analogue."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields

import numpy as np

N_WORKERS = 50
N_CARGO = 450
MAX_TYPES = 10

# (name, low, high); order is also the column order of the per-type kernel table
NP_BOUNDS = (
    ("attached_migration_bias", 0.0, 1.0),
    ("unattached_migration_bias", 0.0, 1.0),
    ("relative_adhesion", 0.0, 10.0),
    ("relative_repulsion", 0.0, 10.0),
    ("persistence_time", 0.0, 10.0),
)


@dataclass(frozen=True)
class NpDesign:
    """One nanoparticle (worker) type."""

    attached_migration_bias: float
    unattached_migration_bias: float
    relative_adhesion: float
    relative_repulsion: float
    persistence_time: float

    def __post_init__(self):
        for name, lo, hi in NP_BOUNDS:
            v = getattr(self, name)
            if not (lo <= v <= hi):
                raise ValueError(f"{name}={v!r} outside [{lo}, {hi}]")

    @classmethod
    def random(cls, rng: np.random.Generator) -> NpDesign:
        return cls(*(float(rng.uniform(lo, hi)) for _, lo, hi in NP_BOUNDS))

    def as_array(self) -> np.ndarray:
        return np.array([getattr(self, name) for name, _, _ in NP_BOUNDS], dtype=float)


def split_workers(n_types: int, total: int = N_WORKERS) -> list[int]:
    """Equal split of ``total`` workers; earlier types take the remainder."""
    if not 1 <= n_types <= MAX_TYPES:
        raise ValueError(f"type count must be in [1, {MAX_TYPES}], got {n_types}")
    base, extra = divmod(total, n_types)
    return [base + (i < extra) for i in range(n_types)]


@dataclass(frozen=True)
class Treatment:
    np_types: tuple[NpDesign, ...]

    def __post_init__(self):
        object.__setattr__(self, "np_types", tuple(self.np_types))
        split_workers(len(self.np_types))  # validates the count
        for t in self.np_types:
            if not isinstance(t, NpDesign):
                raise TypeError(f"expected NpDesign, got {type(t).__name__}")

    @property
    def worker_counts(self) -> list[int]:
        return split_workers(len(self.np_types))

    @property
    def n_types(self) -> int:
        return len(self.np_types)

    def type_table(self) -> np.ndarray:
        return np.array([t.as_array() for t in self.np_types], dtype=float)

    def worker_types(self) -> np.ndarray:
        return np.repeat(np.arange(self.n_types), self.worker_counts)


@dataclass(frozen=True)
class SimParams:
    """Simulation constants.  Units: minutes, micrometres, mmHg.

    The first block holds the published scenario constants.  The rest belong
    to this 2D analogue only (grid, oxygen, cell cycle, injection geometry)
    and were chosen to give a hypoxic core inside a ~300 um tumour.
    """

    damage_rate: float = 0.03333
    repair_rate: float = 0.004167
    drug_death_rate: float = 0.004167
    elastic_coefficient: float = 0.05
    cargo_o2_relative_uptake: float = 0.1
    cargo_apoptosis_rate: float = 4.065e-5
    cargo_relative_adhesion: float = 0.0
    cargo_relative_repulsion: float = 5.0
    cargo_release_o2_threshold: float = 10.0
    max_relative_adhesion_distance: float = 1.25
    max_elastic_displacement: float = 50.0
    max_attachment_distance: float = 18.0
    min_attachment_distance: float = 14.0
    motility_shutdown_threshold: float = 0.001
    attachment_receptor_threshold: float = 0.1
    worker_speed: float = 2.0
    worker_apoptosis_rate: float = 0.0
    worker_o2_relative_uptake: float = 0.1

    # analogue only
    dt: float = 1.0
    phenotype_dt: float = 6.0
    domain_size: float = 1500.0
    voxel_size: float = 20.0
    o2_boundary: float = 38.0
    o2_diffusion: float = 1.0e5
    o2_decay: float = 0.01
    cell_o2_uptake: float = 5.0
    o2_sweeps: int = 2
    cell_radius: float = 8.41
    agent_radius: float = 7.0
    cell_spacing: float = 16.0
    initial_radius: float = 200.0
    cycle_rate: float = 1.0 / 1080.0
    o2_proliferation_min: float = 5.0
    o2_proliferation_sat: float = 20.0
    apoptosis_rate: float = 5.31e-5
    necrosis_o2_threshold: float = 2.5
    necrosis_rate: float = 2.77e-3
    cell_repulsion: float = 3.0
    cell_adhesion: float = 0.4
    injection_gap: float = 40.0
    injection_width: float = 20.0
    agent_o2_coupling: float = 0.0  # 1.0 lets workers/cargo consume oxygen
    corpse_o2_uptake: float = 0.0  # fraction of live uptake kept by dead cells

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if not math.isfinite(v) or v < 0:
                raise ValueError(f"{f.name} must be finite and >= 0, got {v!r}")
        if self.min_attachment_distance >= self.max_attachment_distance:
            raise ValueError("min_attachment_distance must be < max_attachment_distance")
        for name in ("dt", "phenotype_dt", "domain_size", "voxel_size", "cell_radius", "cell_spacing"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be > 0")
        if self.o2_proliferation_sat <= self.o2_proliferation_min:
            raise ValueError("o2_proliferation_sat must exceed o2_proliferation_min")
        if self.corpse_o2_uptake > 1:
            raise ValueError("corpse_o2_uptake must be in [0, 1]")
        if self.o2_sweeps < 1:
            raise ValueError("o2_sweeps must be >= 1")

    @property
    def grid_shape(self) -> int:
        return int(round(self.domain_size / self.voxel_size))

    @property
    def contact_distance(self) -> float:
        """Centre distance within which a deposited cargo touches a cell."""
        return (self.cell_radius + self.agent_radius) * self.max_relative_adhesion_distance

    def max_dt(self) -> float:
        """Largest step that cannot jump a worker across the attachment window."""
        if self.worker_speed == 0:
            return math.inf
        return (self.max_attachment_distance - self.min_attachment_distance) / (2.0 * self.worker_speed)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> SimParams:
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise KeyError(f"unknown SimParams key(s): {', '.join(sorted(unknown))}")
        return cls(**d)

    def kernel_vector(self) -> np.ndarray:
        return np.array([float(getattr(self, name)) for name in KERNEL_FIELDS])


# order of the float vector handed to the numba kernels
KERNEL_FIELDS = (
    "damage_rate", "repair_rate", "drug_death_rate", "elastic_coefficient",
    "cargo_o2_relative_uptake", "cargo_apoptosis_rate", "cargo_relative_adhesion",
    "cargo_relative_repulsion", "cargo_release_o2_threshold", "max_relative_adhesion_distance",
    "max_elastic_displacement", "max_attachment_distance", "min_attachment_distance",
    "motility_shutdown_threshold", "attachment_receptor_threshold", "worker_speed",
    "worker_o2_relative_uptake", "domain_size", "voxel_size", "o2_boundary", "o2_diffusion",
    "o2_decay", "cell_o2_uptake", "cell_radius", "agent_radius", "cell_spacing", "cycle_rate",
    "o2_proliferation_min", "o2_proliferation_sat", "apoptosis_rate", "necrosis_o2_threshold",
    "necrosis_rate", "cell_repulsion", "cell_adhesion", "agent_o2_coupling", "corpse_o2_uptake",
)
