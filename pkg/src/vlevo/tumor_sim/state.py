"""Simulation state container and its on-disk format."""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass

import numpy as np

MAGIC = "VLEVO-TUMOR"
VERSION = 1

# cargo states, mirrored from the kernels
FREE, CARRIED, DEPOSITED, GONE = 0, 1, 2, 3

_ARRAYS = (
    ("cell_pos", np.float64), ("cell_damage", np.float64), ("cell_progress", np.float64),
    ("cell_alive", np.bool_), ("worker_pos", np.float64), ("worker_type", np.int64),
    ("worker_cargo", np.int64), ("worker_dir", np.float64), ("type_table", np.float64),
    ("cargo_pos", np.float64), ("cargo_state", np.int8), ("cargo_receptor", np.float64),
    ("oxygen", np.float64),
)


def make_rngs(seed) -> tuple[np.random.Generator, ...]:
    """Independent streams for cancer cells, agents and drug death."""
    return tuple(np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(3))


@dataclass(eq=False)
class SimState:
    """Everything that evolves during a run.  Positions in um, centred domain.

    ``worker_cargo`` holds the carried cargo index or -1.  ``cargo_state``
    uses FREE / CARRIED / DEPOSITED / GONE.  ``type_table`` has one row per
    worker type with the NpDesign fields in order.
    """

    cell_pos: np.ndarray
    cell_damage: np.ndarray
    cell_progress: np.ndarray
    cell_alive: np.ndarray
    worker_pos: np.ndarray
    worker_type: np.ndarray
    worker_cargo: np.ndarray
    worker_dir: np.ndarray
    type_table: np.ndarray
    cargo_pos: np.ndarray
    cargo_state: np.ndarray
    cargo_receptor: np.ndarray
    oxygen: np.ndarray
    clock: float
    step_count: int
    rngs: tuple

    @classmethod
    def empty(cls, grid: int, o2: float, seed=0) -> SimState:
        z2 = np.zeros((0, 2))
        return cls(
            cell_pos=z2.copy(), cell_damage=np.zeros(0), cell_progress=np.zeros(0),
            cell_alive=np.zeros(0, dtype=bool), worker_pos=z2.copy(),
            worker_type=np.zeros(0, dtype=np.int64), worker_cargo=np.zeros(0, dtype=np.int64),
            worker_dir=z2.copy(), type_table=np.zeros((0, 5)), cargo_pos=z2.copy(),
            cargo_state=np.zeros(0, dtype=np.int8), cargo_receptor=np.zeros(0),
            oxygen=np.full((grid, grid), float(o2)), clock=0.0, step_count=0, rngs=make_rngs(seed),
        )

    @property
    def n_cells(self) -> int:
        return len(self.cell_alive)

    @property
    def live_cells(self) -> int:
        return int(self.cell_alive.sum())

    @property
    def deposited_cargo(self) -> int:
        return int(np.count_nonzero(self.cargo_state == DEPOSITED))

    def copy(self) -> SimState:
        return copy.deepcopy(self)

    def reseed(self, seed) -> None:
        self.rngs = make_rngs(seed)

    def compact(self) -> None:
        """Drop dead cells (they take no further part in anything)."""
        keep = self.cell_alive
        self.cell_pos = self.cell_pos[keep].copy()
        self.cell_damage = self.cell_damage[keep].copy()
        self.cell_progress = self.cell_progress[keep].copy()
        self.cell_alive = self.cell_alive[keep].copy()

    def check(self) -> None:
        """Raise AssertionError if a structural invariant is broken."""
        assert np.all(self.cell_damage >= 0)
        assert np.all(self.oxygen >= 0)
        carried = self.worker_cargo[self.worker_cargo >= 0]
        assert len(np.unique(carried)) == len(carried), "cargo carried twice"
        assert np.all(self.cargo_state[carried] == CARRIED)
        assert np.count_nonzero(self.cargo_state == CARRIED) == len(carried)

    def __eq__(self, other):
        if not isinstance(other, SimState):
            return NotImplemented
        for name, _ in _ARRAYS:
            if not np.array_equal(getattr(self, name), getattr(other, name)):
                return False
        return (
            self.clock == other.clock
            and self.step_count == other.step_count
            and [r.bit_generator.state for r in self.rngs] == [r.bit_generator.state for r in other.rngs]
        )


def save_state(state: SimState, path) -> None:
    arrays = {name: getattr(state, name) for name, _ in _ARRAYS}
    rng_json = json.dumps([r.bit_generator.state for r in state.rngs])
    with open(path, "wb") as fh:
        np.savez_compressed(
            fh,
            magic=np.array(MAGIC),
            version=np.array(VERSION),
            clock=np.array(state.clock),
            step_count=np.array(state.step_count),
            rng_state=np.array(rng_json),
            **arrays,
        )


def _restore_rng(st: dict) -> np.random.Generator:
    bg = getattr(np.random, st["bit_generator"])()
    bg.state = st
    return np.random.Generator(bg)


def load_state(path) -> SimState:
    try:
        with np.load(path, allow_pickle=False) as z:
            data = {k: z[k] for k in z.files}
    except Exception as exc:  # zip/npy parse errors come in many flavours
        raise ValueError(f"{path}: not a tumour state file ({exc})") from exc
    if "magic" not in data or str(data["magic"]) != MAGIC:
        raise ValueError(f"{path}: bad magic, not a tumour state file")
    version = int(data["version"]) if "version" in data else -1
    if version != VERSION:
        raise ValueError(f"{path}: unsupported state version {version} (expected {VERSION})")
    try:
        kw = {name: np.asarray(data[name], dtype=dt) for name, dt in _ARRAYS}
        rngs = tuple(_restore_rng(s) for s in json.loads(str(data["rng_state"])))
        state = SimState(
            clock=float(data["clock"]), step_count=int(data["step_count"]), rngs=rngs, **kw
        )
    except (KeyError, ValueError, TypeError, AttributeError) as exc:
        raise ValueError(f"{path}: malformed tumour state ({exc})") from exc
    n = len(state.cell_alive)
    m = len(state.worker_type)
    c = len(state.cargo_state)
    shapes_ok = (
        state.cell_pos.shape == (n, 2) and state.cell_damage.shape == (n,)
        and state.cell_progress.shape == (n,) and state.worker_pos.shape == (m, 2)
        and state.worker_cargo.shape == (m,) and state.worker_dir.shape == (m, 2)
        and state.cargo_pos.shape == (c, 2) and state.cargo_receptor.shape == (c,)
        and state.oxygen.ndim == 2 and len(rngs) == 3
    )
    if not shapes_ok:
        raise ValueError(f"{path}: malformed tumour state (inconsistent array shapes)")
    return state

