"""2D agent-based tumour / nanoparticle analogue.

Cancer cells live on an oxygen field, workers ferry cargo from an injection
ring into hypoxic tissue, and deposited cargo damages nearby cells.  The
score of a treatment is the number of cancer cells still alive afterwards.
"""

from .params import (
    MAX_TYPES,
    N_CARGO,
    N_WORKERS,
    NP_BOUNDS,
    NpDesign,
    SimParams,
    Treatment,
    split_workers,
)
from .sim import (
    advance,
    apply_treatment,
    empty_state,
    grow_tumor,
    inject,
    load_fixture,
    seed_disc,
    solve_oxygen,
    step,
)
from .state import CARRIED, DEPOSITED, FREE, GONE, SimState, load_state, save_state

__all__ = [
    "MAX_TYPES", "N_CARGO", "N_WORKERS", "NP_BOUNDS", "NpDesign", "SimParams", "Treatment",
    "split_workers", "advance", "apply_treatment", "empty_state", "grow_tumor", "inject",
    "load_fixture", "seed_disc", "solve_oxygen", "step", "CARRIED", "DEPOSITED", "FREE", "GONE",
    "SimState", "load_state", "save_state",
]
