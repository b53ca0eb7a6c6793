"""Command-line entry point (``vlevo``).

Exit codes: 0 success, 1 configuration error (the message names the
offending key or file), 2 failure while running.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from . import experiments as ex
from .adaptive_walk import WalkConfig, run_walk
from .evo_ga import GaConfig, TumorEvaluator, derive_seed, run_ga
from .nk_core import generate_landscape
from .tumor_sim import (
    NP_BOUNDS, NpDesign, SimParams, Treatment, apply_treatment, grow_tumor, load_fixture, load_state, save_state,
)

log = logging.getLogger("vlevo")

OUTPUT_ENV = "VLEVO_OUTPUT_DIR"
DEFAULT_OUTPUT = "vlevo-output"

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2


class ConfigError(Exception):
    pass


# ---------------------------------------------------------------------------
# config helpers
# ---------------------------------------------------------------------------

def read_config(path) -> dict:
    if path is None:
        return {}
    try:
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: not valid TOML ({exc})") from None


def take(cfg: dict, allowed: set, where: str) -> dict:
    unknown = sorted(set(cfg) - allowed)
    if unknown:
        raise ConfigError(f"unknown key(s) in {where}: {', '.join(unknown)}")
    return cfg


def sim_params(cfg: dict) -> SimParams:
    try:
        return SimParams.from_dict(cfg.get("sim", {}))
    except KeyError as exc:
        raise ConfigError(f"[sim]: {exc.args[0]}") from None
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"[sim]: {exc}") from None


def _arg(args, name, cfg, default):
    """Command-line value, else config value, else default."""
    v = getattr(args, name, None)
    return v if v is not None else cfg.get(name, default)


def output_dir(args) -> Path:
    out = Path(args.out or os.environ.get(OUTPUT_ENV) or DEFAULT_OUTPUT)
    return out


def load_tumor(path):
    if path is None:
        return load_fixture()
    try:
        return load_state(path)
    except (OSError, ValueError) as exc:
        raise ConfigError(f"tumor: {exc}") from None


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

WALK_KEYS = {"n", "k", "g", "generations", "p_add", "p_delete", "seed"}


def cmd_nk_walk(args) -> int:
    cfg = take(read_config(args.config), WALK_KEYS, "nk-walk config")
    n, k, g = _arg(args, "n", cfg, 20), _arg(args, "k", cfg, 0), _arg(args, "g", cfg, 0)
    gens = _arg(args, "generations", cfg, 20000)
    p_delete = _arg(args, "p_delete", cfg, 0.0)
    seed = _arg(args, "seed", cfg, 0)
    try:
        if g == 0:
            wc = WalkConfig(generations=gens, seed=derive_seed(seed, 2))
        elif p_delete == 0:
            wc = WalkConfig.growth(g, generations=gens, seed=derive_seed(seed, 2))
        else:
            wc = WalkConfig.growth_deletion(g, p_delete=p_delete, p_add=_arg(args, "p_add", cfg, 0.25),
                                            generations=gens, seed=derive_seed(seed, 2))
        if n < 1 or not 0 <= k < n:
            raise ValueError(f"need n >= 1 and 0 <= k < n, got n={n}, k={k}")
    except (ValueError, TypeError) as exc:
        raise ConfigError(str(exc)) from None
    print(f"seed={seed}")
    if args.dry_run:
        print("planned walks: 1")
        return EXIT_OK
    land = generate_landscape(n, k, derive_seed(seed, 1))
    tr = run_walk(land, wc)
    if args.trace:
        tr.write_csv(args.trace)
    print(f"final_fitness={tr.final_fitness!r} final_length={tr.final_length} "
          f"walk_length={tr.walk_length_to_optimum} length_stop={tr.length_stop_generation} "
          f"accepted_growth={len(tr.accepted_growth_generations)}")
    return EXIT_OK


def _grid_from_config(args, kinds) -> ex.ExperimentGrid:
    cfg = read_config(args.config)
    if args.seed is not None:
        cfg["master_seed"] = args.seed
    try:
        grid = ex.ExperimentGrid.from_dict(cfg)
    except KeyError as exc:
        raise ConfigError(str(exc.args[0])) from None
    except (ValueError, TypeError) as exc:
        raise ConfigError(str(exc)) from None
    if grid.kind not in kinds:
        raise ConfigError(f"kind: {grid.kind!r} is not valid here (expected one of {', '.join(kinds)})")
    return grid


def cmd_grid(args, kinds) -> int:
    grid = _grid_from_config(args, kinds)
    out = output_dir(args)
    print(f"seed={grid.master_seed}")
    print(f"planned replicates: {grid.planned_runs()} ({len(grid.cells())} cells x {grid.replicates})")
    if args.dry_run:
        return EXIT_OK
    records = ex.run_grid(grid, out, workers=args.workers, resume=not args.fresh, plots=args.plots)
    print(f"wrote {out / 'raw.csv'} and {out / 'aggregate.csv'} ({len(records)} aggregate rows)")
    return EXIT_OK


def cmd_tumor_grow(args) -> int:
    cfg = take(read_config(args.config), {"days", "seed", "sim"}, "tumor-grow config")
    params = sim_params(cfg)
    days = _arg(args, "days", cfg, 7.0)
    seed = _arg(args, "seed", cfg, 0)
    if days < 0:
        raise ConfigError(f"days must be >= 0, got {days}")
    out = output_dir(args)
    path = Path(args.output) if args.output else out / "tumor.npz"
    print(f"seed={seed}")
    if args.dry_run:
        print(f"planned: grow {days} days -> {path}")
        return EXIT_OK
    state = grow_tumor(params, days, seed)
    path.parent.mkdir(parents=True, exist_ok=True)
    save_state(state, path)
    print(f"live_cells={state.live_cells} path={path}")
    return EXIT_OK


def _treatment(entries) -> Treatment:
    if not entries:
        raise ConfigError("np_types: at least one nanoparticle type is required")
    try:
        return Treatment([NpDesign(**e) for e in entries])
    except TypeError as exc:
        raise ConfigError(f"np_types: {exc}") from None
    except ValueError as exc:
        raise ConfigError(f"np_types: {exc}") from None


def cmd_sim_eval(args) -> int:
    cfg = take(read_config(args.config), {"days", "seed", "samples", "tumor", "sim", "np_types"},
               "sim-eval config")
    params = sim_params(cfg)
    treatment = None if args.untreated else _treatment(cfg.get("np_types"))
    days = _arg(args, "days", cfg, 3.0)
    seed = _arg(args, "seed", cfg, 0)
    samples = _arg(args, "samples", cfg, 1)
    if samples < 1:
        raise ConfigError("samples must be >= 1")
    tumor = load_tumor(args.tumor or cfg.get("tumor"))
    print(f"seed={seed}")
    if args.dry_run:
        print(f"planned simulations: {samples}")
        return EXIT_OK
    counts = []
    for i in range(samples):
        s = seed if samples == 1 else derive_seed(seed, i)
        tele = args.telemetry if samples == 1 else None
        counts.append(apply_treatment(tumor, treatment, params, days, s, telemetry=tele))
    print(f"remaining_cells={' '.join(map(str, counts))} mean={sum(counts) / len(counts)!r}")
    return EXIT_OK


GA_TOP = {"ga", "sim", "days", "tumor"}


def _ga_config(cfg: dict, seed) -> GaConfig:
    ga = dict(cfg.get("ga", {}))
    if seed is not None:
        ga["seed"] = seed
    fields = set(GaConfig.__dataclass_fields__)
    unknown = sorted(set(ga) - fields)
    if unknown:
        raise ConfigError(f"unknown key(s) in [ga]: {', '.join(unknown)}")
    try:
        return GaConfig(**ga)
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"[ga]: {exc}") from None


def cmd_ga_run(args) -> int:
    cfg = take(read_config(args.config), GA_TOP, "ga-run config")
    gc = _ga_config(cfg, args.seed)
    params = sim_params(cfg)
    days = cfg.get("days", 3.0)
    tumor = load_tumor(cfg.get("tumor"))
    out = output_dir(args)
    print(f"seed={gc.seed}")
    print(f"planned evaluator calls: {gc.evaluator_calls} ({gc.generations} generations)")
    if args.dry_run:
        return EXIT_OK
    evaluator = TumorEvaluator(tumor, params, days)

    def progress(g, tr):
        if g % 20 == 0 or g == gc.generations:
            log.info("generation %d: best %.1f, mean %.1f, best types %d", g, tr.best_fitness[-1],
                     tr.mean_fitness[-1], tr.best_type_count[-1])

    tr = run_ga(evaluator, gc, progress=progress)
    out.mkdir(parents=True, exist_ok=True)
    tr.write_csv(out / "ga_trace.csv")
    best = tr.best
    (out / "ga_best.json").write_text(json.dumps({
        "seed": gc.seed, "sampled_fitness": best.sampled_fitness, "evaluations": tr.evaluations,
        "np_types": [dict(zip([name for name, *_ in NP_BOUNDS], t.as_array().tolist()))
                     for t in best.treatment.np_types],
    }, indent=1) + "\n")
    print(f"best_fitness={best.sampled_fitness!r} best_types={best.n_types} evaluations={tr.evaluations} "
          f"trace={out / 'ga_trace.csv'}")
    return EXIT_OK


def cmd_plot(args) -> int:
    src = Path(args.dir) if args.dir else output_dir(args)
    path = src / "aggregate.csv"
    if not path.exists():
        raise ConfigError(f"no aggregate.csv in {src}")
    try:
        records = ex.read_aggregate(path)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    if not records:
        raise ConfigError(f"{path} has no rows")
    if args.dry_run:
        print(f"planned: plots for {len(records)} records")
        return EXIT_OK
    images = ex.emit_plots(records, src / "plots")
    print(f"wrote {len(images)} figure(s) to {src / 'plots'}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="TOML config file (see configs/ for commented examples)")
    common.add_argument("--out", help=f"output directory (default ${OUTPUT_ENV} or ./{DEFAULT_OUTPUT})")
    common.add_argument("--seed", type=int, help="seed override; wins over the config seed")
    common.add_argument("--workers", type=int, default=1, help="parallel worker processes (grids only)")
    common.add_argument("--dry-run", action="store_true", help="validate the config, print the plan, run nothing")
    common.add_argument("-v", "--verbose", action="count", default=0, help="more logging (-v info, -vv debug)")

    p = argparse.ArgumentParser(
        prog="vlevo",
        description="NK adaptive walks with genome growth, and a GA over nanoparticle treatments "
                    "in a 2D tumour simulator.",
        epilog="exit codes: 0 ok, 1 configuration error, 2 runtime failure",
    )
    sub = p.add_subparsers(dest="command", required=True, metavar="command")

    w = sub.add_parser("nk-walk", parents=[common], help="one adaptive walk on a fresh NK landscape")
    w.add_argument("--n", type=int, help="initial gene count N (default 20)")
    w.add_argument("--k", type=int, help="epistatic links per gene K (default 0)")
    w.add_argument("--g", type=int, help="growth block size G, 0 for fixed length (default 0)")
    w.add_argument("--generations", type=int, help="walk length (default 20000)")
    w.add_argument("--p-add", dest="p_add", type=float, help="growth probability with deletion (default 0.25)")
    w.add_argument("--p-delete", dest="p_delete", type=float, help="deletion probability (default 0)")
    w.add_argument("--trace", help="write the per-generation trace CSV here")
    w.set_defaults(func=cmd_nk_walk)

    for name, kinds, text in (("nk-grid", ex.NK_KINDS, "NK walk grid"), ("ga-grid", ex.GA_KINDS, "repeated GA runs")):
        gp = sub.add_parser(name, parents=[common], help=f"{text} from a grid config")
        gp.add_argument("--plots", action="store_true", help="also render figures")
        gp.add_argument("--fresh", action="store_true", help="ignore finished rows in an existing raw.csv")
        gp.set_defaults(func=lambda a, kinds=kinds: cmd_grid(a, kinds))

    t = sub.add_parser("tumor-grow", parents=[common], help="grow an untreated tumour and save its state")
    t.add_argument("--days", type=float, help="growth time in days (default 7)")
    t.add_argument("--output", help="state file path (default <out>/tumor.npz)")
    t.set_defaults(func=cmd_tumor_grow)

    s = sub.add_parser("sim-eval", parents=[common], help="simulate one treatment and count surviving cells")
    s.add_argument("--days", type=float, help="treatment time in days (default 3)")
    s.add_argument("--samples", type=int, help="number of seeded runs (default 1)")
    s.add_argument("--tumor", help="tumour state file (default: packaged fixture)")
    s.add_argument("--untreated", action="store_true", help="run the untreated baseline")
    s.add_argument("--telemetry", help="CSV of (clock, live cells, deposited cargo); single run only")
    s.set_defaults(func=cmd_sim_eval)

    g = sub.add_parser("ga-run", parents=[common], help="one GA run; writes ga_trace.csv and ga_best.json")
    g.set_defaults(func=cmd_ga_run)

    pl = sub.add_parser("plot", parents=[common], help="render figures from a grid output directory")
    pl.add_argument("--dir", help="grid output directory (default --out)")
    pl.set_defaults(func=cmd_plot)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = [logging.WARNING, logging.INFO, logging.DEBUG][min(args.verbose, 2)]
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    if args.workers < 1:
        print("error: --workers must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except KeyboardInterrupt:
        print("interrupted", file=sys.stderr)
        return EXIT_RUNTIME
    except Exception as exc:
        log.debug("failure", exc_info=True)
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
