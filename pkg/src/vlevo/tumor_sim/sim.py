"""Driver functions: tumour growth, treatment runs and single steps."""

from __future__ import annotations

import csv
import math
from importlib import resources

import numpy as np

from . import _kernels as K
from .params import N_CARGO, SimParams, Treatment
from .state import FREE, SimState, load_state

O2_TOL = 1e-9
O2_MAX_SWEEPS = 50_000
MINUTES_PER_DAY = 1440.0
FIXTURE_NAME = "tumor_fixture.npz"
FIXTURE_SEED = 2024
FIXTURE_DAYS = 7.0


def _phenotype_every(params: SimParams, dt: float) -> int:
    if not dt > 0:
        raise ValueError(f"dt must be > 0, got {dt}")
    if dt > params.max_dt() + 1e-12:
        raise ValueError(
            f"dt={dt} exceeds the motility stability bound {params.max_dt():g} min "
            "(a worker could jump over the attachment window)"
        )
    every = int(round(params.phenotype_dt / dt))
    if every < 1 or abs(every * dt - params.phenotype_dt) > 1e-9 * params.phenotype_dt:
        raise ValueError(f"phenotype_dt={params.phenotype_dt} is not a whole number of dt={dt} steps")
    return every


def _bins(params: SimParams) -> tuple[float, int]:
    reach = max(
        params.contact_distance,
        params.max_attachment_distance,
        params.cell_spacing,
        params.voxel_size,
    )
    nb = max(1, int(params.domain_size // reach))
    return params.domain_size / nb, nb


def solve_oxygen(state: SimState, params: SimParams) -> int:
    """Relax the oxygen field to convergence for the current sinks."""
    P = params.kernel_vector()
    coef = np.empty_like(state.oxygen)
    K.build_coefficients(coef, P, state.cell_pos, state.cell_alive, state.n_cells, state.worker_pos,
                         state.cargo_state, state.cargo_pos)
    o2p = K.pad_field(state.oxygen, params.o2_boundary)
    done = K.relax_oxygen(o2p, coef, params.o2_boundary, O2_MAX_SWEEPS, O2_TOL)
    state.oxygen = o2p[1:-1, 1:-1].copy()
    return int(done)


def empty_state(params: SimParams, seed=0) -> SimState:
    g = params.grid_shape
    return SimState.empty(g, params.o2_boundary, seed)


def seed_disc(params: SimParams, seed=0, radius: float | None = None) -> SimState:
    """Hex-packed disc of cancer cells with random cycle phases, oxygen solved."""
    radius = params.initial_radius if radius is None else radius
    state = empty_state(params, seed)
    a = params.cell_spacing
    rows = int(radius // (a * math.sqrt(3) / 2)) + 1
    pts = []
    for r in range(-rows, rows + 1):
        y = r * a * math.sqrt(3) / 2
        off = 0.5 * a * (r & 1)
        for c in range(-int(radius // a) - 1, int(radius // a) + 2):
            x = c * a + off
            if x * x + y * y <= radius * radius:
                pts.append((x, y))
    n = len(pts)
    state.cell_pos = np.array(pts, dtype=float).reshape(n, 2)
    state.cell_damage = np.zeros(n)
    state.cell_progress = state.rngs[0].random(n)
    state.cell_alive = np.ones(n, dtype=bool)
    solve_oxygen(state, params)
    return state


def _run(state: SimState, params: SimParams, n_steps: int, dt: float) -> None:
    every = _phenotype_every(params, dt)
    if n_steps <= 0:
        return
    P = params.kernel_vector()
    bw, nb = _bins(params)
    n = state.n_cells
    alive = state.live_cells
    cap = n + max(2 * alive, 256)

    def padded(a, size):
        out = np.zeros((size,) + a.shape[1:], dtype=a.dtype)
        out[: len(a)] = a
        return out

    cpos = padded(state.cell_pos, cap)
    cdmg = padded(state.cell_damage, cap)
    cprog = padded(state.cell_progress, cap)
    calive = padded(state.cell_alive, cap)
    counts = np.array([n, state.step_count], dtype=np.int64)
    n_cargo = len(state.cargo_state)
    U = np.empty_like(state.oxygen)
    o2p = K.pad_field(state.oxygen, params.o2_boundary)
    chead = np.empty(nb * nb, dtype=np.int64)
    fhead = np.empty(nb * nb, dtype=np.int64)
    fnext = np.empty(n_cargo, dtype=np.int64)
    types = state.type_table if len(state.type_table) else np.zeros((1, 5))
    remaining = n_steps
    while remaining > 0:
        cnext = np.empty(cpos.shape[0], dtype=np.int64)
        contact = np.empty(cpos.shape[0], dtype=np.int64)
        co2 = np.empty(cpos.shape[0])
        done = K.run_steps(
            remaining, dt, every, params.o2_sweeps, P, types, cpos, cdmg, cprog, calive, counts,
            state.worker_pos, state.worker_type, state.worker_cargo, state.worker_dir,
            state.cargo_pos, state.cargo_state, state.cargo_receptor, o2p, U,
            chead, cnext, contact, co2, fhead, fnext,
            state.rngs[0], state.rngs[1], state.rngs[2], bw, nb,
        )
        remaining -= done
        if remaining > 0:
            size = 2 * cpos.shape[0]
            cpos, cdmg, cprog, calive = (padded(a, size) for a in (cpos, cdmg, cprog, calive))
    n = int(counts[0])
    state.oxygen = o2p[1:-1, 1:-1].copy()
    state.cell_pos = cpos[:n].copy()
    state.cell_damage = cdmg[:n].copy()
    state.cell_progress = cprog[:n].copy()
    state.cell_alive = calive[:n].copy()
    state.step_count = int(counts[1])
    state.clock += n_steps * dt


def step(state: SimState, params: SimParams, dt: float | None = None) -> None:
    """Advance ``state`` in place by one step of ``dt`` minutes (default params.dt)."""
    _run(state, params, 1, params.dt if dt is None else dt)


def advance(state: SimState, params: SimParams, minutes: float, dt: float | None = None,
            telemetry=None) -> None:
    """Advance in place by ``minutes``; optionally write (clock, live, deposited)
    rows to the CSV path ``telemetry`` once per phenotype interval."""
    dt = params.dt if dt is None else dt
    n_steps = int(round(minutes / dt))
    if telemetry is None:
        _run(state, params, n_steps, dt)
        return
    every = _phenotype_every(params, dt)
    with open(telemetry, "w", newline="") as fh:
        fh.write("# vlevo tumour telemetry v1\n")
        w = csv.writer(fh)
        w.writerow(["clock", "live_cells", "deposited_cargo"])
        w.writerow([repr(state.clock), state.live_cells, state.deposited_cargo])
        while n_steps > 0:
            chunk = min(every, n_steps)
            _run(state, params, chunk, dt)
            n_steps -= chunk
            w.writerow([repr(state.clock), state.live_cells, state.deposited_cargo])


def grow_tumor(params: SimParams, days: float, seed=0) -> SimState:
    """Seed the initial disc and grow it without treatment for ``days``.

    Dead cells are dropped from the returned state.
    """
    if days < 0:
        raise ValueError(f"days must be >= 0, got {days}")
    state = seed_disc(params, seed)
    if days > 0:
        advance(state, params, days * MINUTES_PER_DAY)
        state.compact()
    return state


def tumour_edge(state: SimState) -> tuple[np.ndarray, float]:
    """Centroid of the live cells and the largest live-cell distance from it."""
    pos = state.cell_pos[state.cell_alive]
    if len(pos) == 0:
        return np.zeros(2), 0.0
    c = pos.mean(axis=0)
    return c, float(np.sqrt(((pos - c) ** 2).sum(axis=1)).max())


def inject(state: SimState, treatment: Treatment, params: SimParams, n_cargo: int = N_CARGO) -> None:
    """Place cargo and workers on a ring just outside the tumour (agent stream)."""
    rng = state.rngs[1]
    centre, edge = tumour_edge(state)
    ring = edge + params.cell_radius + params.injection_gap
    half = 0.5 * params.domain_size - params.agent_radius

    def ring_points(m):
        th = rng.uniform(0.0, 2 * math.pi, m)
        r = ring + rng.uniform(-0.5, 0.5, m) * params.injection_width
        pts = centre + np.column_stack([r * np.cos(th), r * np.sin(th)])
        return np.clip(pts, -half, half)

    state.cargo_pos = ring_points(n_cargo)
    state.cargo_state = np.full(n_cargo, FREE, dtype=np.int8)
    state.cargo_receptor = np.ones(n_cargo)
    wt = treatment.worker_types()
    state.worker_pos = ring_points(len(wt))
    state.worker_type = wt.astype(np.int64)
    state.worker_cargo = np.full(len(wt), -1, dtype=np.int64)
    th = rng.uniform(0.0, 2 * math.pi, len(wt))
    state.worker_dir = np.column_stack([np.cos(th), np.sin(th)])
    state.type_table = treatment.type_table()


def apply_treatment(tumor: SimState, treatment: Treatment | None, params: SimParams,
                    days: float = 3.0, seed=0, telemetry=None) -> int:
    """Inject ``treatment`` into a copy of ``tumor``, run ``days`` and return
    the number of live cancer cells.  ``treatment=None`` is the untreated
    baseline with the same random streams for the cancer cells."""
    state = tumor.copy()
    state.reseed(seed)
    if treatment is not None:
        if not isinstance(treatment, Treatment):
            raise TypeError("treatment must be a Treatment")
        inject(state, treatment, params)
    advance(state, params, days * MINUTES_PER_DAY, telemetry=telemetry)
    return state.live_cells


def load_fixture() -> SimState:
    """The packaged evaluation tumour (grown from FIXTURE_SEED for FIXTURE_DAYS)."""
    with resources.as_file(resources.files("vlevo") / "data" / FIXTURE_NAME) as p:
        return load_state(p)
