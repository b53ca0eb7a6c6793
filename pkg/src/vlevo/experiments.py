"""Experiment grids, replicate bookkeeping, aggregation and statistics.

A grid is the product of its parameter axes ("cells"), each run for a
number of replicates.  Every replicate is seeded from (master seed, cell,
replicate index), so a grid re-run gives the same ``raw.csv`` byte for byte
whatever the worker count.

Output directory layout::

    grid.json       the grid that produced the directory (checked on resume)
    raw.csv         one row per NK walk, or one row per GA generation per run
    aggregate.csv   mean / min / max / 95% CI half-width per cell and metric
    warnings.csv    replicates that raised, excluded from the aggregates
    plots/          figures plus the CSV behind each one
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import itertools
import json
import logging
import math
import os
import warnings
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy import stats

from .adaptive_walk import WalkConfig, run_walk
from .evo_ga import GaConfig, TumorEvaluator, derive_seed, run_ga
from .nk_core import generate_landscape
from .tumor_sim import SimParams, load_fixture

log = logging.getLogger(__name__)

RAW_VERSION = "# vlevo raw v1"
AGGREGATE_VERSION = "# vlevo aggregate v1"
WARNINGS_VERSION = "# vlevo warnings v1"

NK_KINDS = ("nk-fixed", "nk-grow", "nk-delete", "nk-delete-sweep")
GA_KINDS = ("ga-fixed", "ga-grow")
KINDS = NK_KINDS + GA_KINDS

NK_COORDS = ("n", "k", "g", "p_delete")
NK_METRICS = ("final_fitness", "final_length", "walk_length", "length_stop", "growth_1", "growth_2", "growth_3")
GA_COORDS = ("types_added", "generation")
GA_METRICS = ("mean_fitness", "best_fitness", "best_type_count")
WAITING_GENES = 3


@dataclass(frozen=True)
class ExperimentGrid:
    """Axes and replicate counts for one experiment.

    ``types_added`` 0 stands for the fixed-length GA arm.  ``sim`` holds
    SimParams overrides for the GA evaluator.
    """

    kind: str
    n: tuple = (20,)
    k: tuple = (0,)
    g: tuple = (0,)
    p_delete: tuple = (0.0,)
    p_add: float = 0.25  # growth probability for the deletion kinds
    types_added: tuple = (1,)
    landscapes: int = 10
    starts: int = 10
    generations: int = 20000
    ga_runs: int = 10
    population_size: int = 20
    evaluation_budget: int = 1000
    samples_per_evaluation: int = 5
    days: float = 3.0
    sim: dict = field(default_factory=dict)
    master_seed: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"kind must be one of {', '.join(KINDS)}, got {self.kind!r}")
        for name in ("n", "k", "g", "p_delete", "types_added"):
            v = getattr(self, name)
            v = tuple(v) if isinstance(v, (list, tuple)) else (v,)
            if not v:
                raise ValueError(f"axis {name} is empty")
            object.__setattr__(self, name, v)
        for name in ("landscapes", "starts", "ga_runs"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.master_seed < 0:
            raise ValueError("master_seed must be >= 0")
        if self.kind == "nk-fixed" and self.g != (0,):
            raise ValueError("nk-fixed grids have g = 0 only")
        if self.kind in ("nk-grow", "nk-delete", "nk-delete-sweep") and min(self.g) < 1:
            raise ValueError(f"{self.kind} needs g >= 1")
        if self.kind == "ga-fixed" and self.types_added != (0,):
            object.__setattr__(self, "types_added", (0,))
        if self.kind == "ga-grow" and min(self.types_added) < 1:
            raise ValueError("ga-grow needs types_added >= 1")
        SimParams.from_dict(dict(self.sim))  # validates the override keys
        for c in self.cells():
            self.walk_config(c, 0) if self.is_nk else self.ga_config(c, 0)

    @classmethod
    def from_dict(cls, d: dict) -> ExperimentGrid:
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise KeyError(f"unknown grid key(s): {', '.join(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}

    @property
    def is_nk(self) -> bool:
        return self.kind in NK_KINDS

    @property
    def coords(self) -> tuple[str, ...]:
        return NK_COORDS if self.is_nk else ("types_added",)

    @property
    def metrics(self) -> tuple[str, ...]:
        return NK_METRICS if self.is_nk else GA_METRICS

    @property
    def replicates(self) -> int:
        return self.landscapes * self.starts if self.is_nk else self.ga_runs

    def cells(self) -> list[dict]:
        if self.is_nk:
            p_del = self.p_delete if self.kind in ("nk-delete", "nk-delete-sweep") else (0.0,)
            axes = (self.n, self.k, self.g, p_del)
            return [dict(zip(NK_COORDS, v)) for v in itertools.product(*axes)]
        return [{"types_added": t} for t in self.types_added]

    def planned_runs(self) -> int:
        return len(self.cells()) * self.replicates

    def walk_config(self, cell: dict, seed: int) -> WalkConfig:
        if self.kind == "nk-fixed":
            return WalkConfig(generations=self.generations, seed=seed)
        if self.kind == "nk-grow":
            return WalkConfig.growth(cell["g"], generations=self.generations, seed=seed)
        return WalkConfig.growth_deletion(cell["g"], p_delete=cell["p_delete"], p_add=self.p_add,
                                          generations=self.generations, seed=seed)

    def ga_config(self, cell: dict, seed: int) -> GaConfig:
        t = cell["types_added"]
        return GaConfig(
            population_size=self.population_size, evaluation_budget=self.evaluation_budget,
            samples_per_evaluation=self.samples_per_evaluation, p_add_type=0.5 if t else 0.0,
            types_added_per_event=max(t, 1), seed=seed,
        )

    def replicate_seed(self, cell: dict, r: int) -> int:
        """Seed of replicate ``r``.

        GA arms share the seed of a replicate index (the arm is left out of
        the hash), so every arm of run ``r`` starts from one population.
        """
        if self.is_nk:
            return derive_seed(self.master_seed, cell_key(cell), r)
        return derive_seed(self.master_seed, r)

    def landscape_seed(self, cell: dict, r: int) -> int:
        # one landscape set per (n, k), shared by every g / deletion setting
        return derive_seed(self.master_seed, cell["n"], cell["k"], r // self.starts)


def cell_key(cell: dict) -> int:
    text = json.dumps(cell, sort_keys=True)
    return int.from_bytes(hashlib.blake2b(text.encode(), digest_size=8).digest(), "little") >> 1


@dataclass(frozen=True)
class AggregateRecord:
    coords: tuple  # ((name, value), ...)
    metric: str
    mean: float
    min: float
    max: float
    ci95: float  # half-width; nan when n < 2
    n: int  # sample count ("count" column on disk)

    def coord(self, name):
        return dict(self.coords)[name]


# ---------------------------------------------------------------------------
# statistics
# ---------------------------------------------------------------------------

def welch_t_test(sample_a: Sequence[float], sample_b: Sequence[float]) -> float:
    """Two-sided Welch t-test p-value.

    Both samples constant and equal gives p = 1; both constant but different
    gives p = 0.  Either case raises a RuntimeWarning.
    """
    a = np.asarray(sample_a, dtype=float)
    b = np.asarray(sample_b, dtype=float)
    if len(a) < 2 or len(b) < 2:
        raise ValueError("each sample needs at least 2 values")
    va, vb = a.var(ddof=1), b.var(ddof=1)
    if va == 0 and vb == 0:
        warnings.warn("welch_t_test: both samples have zero variance", RuntimeWarning, stacklevel=2)
        return 1.0 if a.mean() == b.mean() else 0.0
    return float(stats.ttest_ind(a, b, equal_var=False).pvalue)


def confidence_interval_95(sample: Sequence[float]) -> tuple[float, float]:
    """(mean, half-width) of the Student-t 95% interval."""
    x = np.asarray(sample, dtype=float)
    if len(x) < 2:
        raise ValueError("need at least 2 values")
    half = stats.t.ppf(0.975, len(x) - 1) * x.std(ddof=1) / math.sqrt(len(x))
    return float(x.mean()), float(half)


def spearman(x: Sequence[float], y: Sequence[float]) -> tuple[float, float]:
    """Spearman rank correlation and its two-sided p-value."""
    res = stats.spearmanr(x, y)
    return float(res.statistic), float(res.pvalue)


# ---------------------------------------------------------------------------
# replicates
# ---------------------------------------------------------------------------

@lru_cache(maxsize=4)
def _evaluator(sim_items: tuple, days: float) -> TumorEvaluator:
    return TumorEvaluator(load_fixture(), SimParams.from_dict(dict(sim_items)), days)


def run_replicate(grid: ExperimentGrid, cell: dict, r: int) -> list[dict]:
    """Rows for one replicate (one row for NK, one per generation for GA)."""
    seed = grid.replicate_seed(cell, r)
    if grid.is_nk:
        land = generate_landscape(cell["n"], cell["k"], grid.landscape_seed(cell, r))
        tr = run_walk(land, grid.walk_config(cell, seed))
        growth = tr.accepted_growth_generations
        row = dict(cell, replicate=r, landscape=r // grid.starts, start=r % grid.starts, seed=seed,
                   final_fitness=tr.final_fitness, final_length=tr.final_length,
                   walk_length=tr.walk_length_to_optimum, length_stop=tr.length_stop_generation)
        for j in range(WAITING_GENES):
            row[f"growth_{j + 1}"] = growth[j] if j < len(growth) else None
        return [row]
    ev = _evaluator(tuple(sorted(grid.sim.items())), float(grid.days))
    tr = run_ga(ev, grid.ga_config(cell, seed))
    return [
        dict(cell, replicate=r, seed=seed, generation=g, mean_fitness=tr.mean_fitness[g],
             best_fitness=tr.best_fitness[g], best_type_count=tr.best_type_count[g], evaluations=tr.evaluations)
        for g in range(tr.generations + 1)
    ]


def raw_columns(grid: ExperimentGrid) -> list[str]:
    if grid.is_nk:
        return list(NK_COORDS) + ["replicate", "landscape", "start", "seed"] + list(NK_METRICS)
    return ["types_added", "replicate", "seed", "generation"] + list(GA_METRICS) + ["evaluations"]


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _parse(v: str):
    if v == "":
        return None
    try:
        return int(v)
    except ValueError:
        return float(v)


def _sort_key(grid: ExperimentGrid, cells: list[dict]):
    order = {json.dumps(c, sort_keys=True): i for i, c in enumerate(cells)}

    def key(row):
        c = {name: row[name] for name in grid.coords}
        return order[json.dumps(c, sort_keys=True)], row["replicate"], row.get("generation", 0)

    return key


def write_rows(path, header: str, columns: Sequence[str], rows: Iterable[dict]) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(header + "\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([_fmt(row.get(c)) for c in columns])


def read_raw(path) -> list[dict]:
    """Rows of a raw.csv, numbers parsed, empty cells as None."""
    with open(path, newline="") as fh:
        first = fh.readline().rstrip("\n")
        if first != RAW_VERSION:
            raise ValueError(f"{path}: unexpected header {first!r}, expected {RAW_VERSION!r}")
        return [{k: _parse(v) for k, v in row.items()} for row in csv.DictReader(fh)]


def _load_done(grid: ExperimentGrid, path: Path) -> dict:
    """Complete replicates already in ``path`` keyed by (cell json, replicate)."""
    if not path.exists():
        return {}
    try:
        rows = read_raw(path)
    except (ValueError, KeyError, csv.Error):
        log.warning("ignoring unreadable %s", path)
        return {}
    want = 1 if grid.is_nk else None
    groups: dict = {}
    for row in rows:
        c = json.dumps({n: row[n] for n in grid.coords}, sort_keys=True)
        groups.setdefault((c, row["replicate"]), []).append(row)
    if not grid.is_nk:
        want = grid.ga_config(grid.cells()[0], 0).generations + 1
    return {k: v for k, v in groups.items() if len(v) == want}


def _check_grid_file(grid: ExperimentGrid, out: Path, resume: bool) -> None:
    gpath = out / "grid.json"
    text = json.dumps(grid.to_dict(), sort_keys=True, indent=1)
    if gpath.exists() and resume and (out / "raw.csv").exists():
        if gpath.read_text() != text:
            raise ValueError(f"{out} holds results of a different grid; use another directory or resume=False")
    gpath.write_text(text)


def run_grid(grid: ExperimentGrid, out_dir, workers: int = 1, resume: bool = True,
             plots: bool = False) -> list[AggregateRecord]:
    """Run every (cell, replicate), then write raw / aggregate / warnings CSVs.

    Finished replicates found in an existing ``raw.csv`` are kept when
    ``resume`` is set.  A replicate that raises is logged to ``warnings.csv``
    and left out of the aggregates.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    _check_grid_file(grid, out, resume)
    raw_path = out / "raw.csv"
    cells = grid.cells()
    columns = raw_columns(grid)
    done = _load_done(grid, raw_path) if resume else {}
    rows = [r for group in done.values() for r in group]
    todo = [(c, r) for c in cells for r in range(grid.replicates)
            if (json.dumps(c, sort_keys=True), r) not in done]
    log.info("%s: %d replicates to run, %d resumed", grid.kind, len(todo), len(done))

    # journal: finished replicates are appended as they arrive so a killed
    # run can resume; the file is rewritten sorted at the end
    write_rows(raw_path, RAW_VERSION, columns, rows)
    failures = []
    with open(raw_path, "a", newline="") as journal:
        w = csv.writer(journal, lineterminator="\n")

        def keep(new_rows):
            for row in new_rows:
                w.writerow([_fmt(row.get(c)) for c in columns])
            journal.flush()
            rows.extend(new_rows)

        def failed(cell, r, exc):
            msg = f"{type(exc).__name__}: {exc}"
            warnings.warn(f"replicate {r} of {cell} failed: {msg}", RuntimeWarning, stacklevel=3)
            failures.append(dict(cell, replicate=r, error=msg))

        if workers <= 1:
            for cell, r in todo:
                try:
                    keep(run_replicate(grid, cell, r))
                except Exception as exc:  # recorded, never dropped silently
                    failed(cell, r, exc)
        else:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                futs = {pool.submit(run_replicate, grid, c, r): (c, r) for c, r in todo}
                for fut in as_completed(futs):
                    cell, r = futs[fut]
                    try:
                        keep(fut.result())
                    except Exception as exc:
                        failed(cell, r, exc)

    rows.sort(key=_sort_key(grid, cells))
    write_rows(raw_path, RAW_VERSION, columns, rows)
    failures.sort(key=_sort_key(grid, cells))
    write_rows(out / "warnings.csv", WARNINGS_VERSION, list(grid.coords) + ["replicate", "error"], failures)
    records = aggregate(rows, grid)
    write_aggregate(out / "aggregate.csv", records)
    if plots:
        emit_plots(records, out / "plots")
    return records


def aggregate(rows: Sequence[dict], grid: ExperimentGrid) -> list[AggregateRecord]:
    """Per-cell summary of every metric (per generation for GA grids)."""
    keys = grid.coords if grid.is_nk else GA_COORDS
    groups: dict = {}
    for row in rows:
        groups.setdefault(tuple(row[k] for k in keys), []).append(row)
    out = []
    for ck in sorted(groups, key=lambda t: tuple(float(x) for x in t)):
        for metric in grid.metrics:
            vals = [r[metric] for r in groups[ck] if r[metric] is not None]
            if not vals:
                continue
            x = np.asarray(vals, dtype=float)
            ci = confidence_interval_95(x)[1] if len(x) >= 2 else math.nan
            lo, hi = float(x.min()), float(x.max())
            mean = min(max(float(x.mean()), lo), hi)  # rounding can push it a ulp outside
            out.append(AggregateRecord(tuple(zip(keys, ck)), metric, mean, lo, hi, ci, len(x)))
    return out


def write_aggregate(path, records: Sequence[AggregateRecord]) -> None:
    names = [n for n, _ in records[0].coords] if records else []
    columns = names + ["metric", "count", "mean", "min", "max", "ci95"]
    rows = [dict(r.coords, metric=r.metric, count=r.n, mean=r.mean, min=r.min, max=r.max, ci95=r.ci95)
            for r in records]
    write_rows(path, AGGREGATE_VERSION, columns, rows)


def read_aggregate(path) -> list[AggregateRecord]:
    with open(path, newline="") as fh:
        first = fh.readline().rstrip("\n")
        if first != AGGREGATE_VERSION:
            raise ValueError(f"{path}: unexpected header {first!r}")
        reader = csv.DictReader(fh)
        fixed = {"metric", "count", "mean", "min", "max", "ci95"}
        out = []
        for row in reader:
            coords = tuple((k, _parse(v)) for k, v in row.items() if k not in fixed)
            out.append(AggregateRecord(coords, row["metric"], float(row["mean"]), float(row["min"]),
                                       float(row["max"]), float(row["ci95"]), int(row["count"])))
        return out


def values(rows: Sequence[dict], metric: str, **cell) -> np.ndarray:
    """Non-missing ``metric`` values of the rows matching every ``cell`` coordinate."""
    sel = [r[metric] for r in rows if all(r[k] == v for k, v in cell.items())]
    return np.array([v for v in sel if v is not None], dtype=float)


def final_rows(rows: Sequence[dict]) -> list[dict]:
    """Last generation of every GA run."""
    last: dict = {}
    for r in rows:
        key = (r["types_added"], r["replicate"])
        if key not in last or r["generation"] > last[key]["generation"]:
            last[key] = r
    return list(last.values())


# ---------------------------------------------------------------------------
# plots
# ---------------------------------------------------------------------------

def _series(records, metric, x_name, group_names):
    """{group tuple: (x, mean, min, max, ci)} sorted by x."""
    out: dict = {}
    for r in records:
        if r.metric != metric:
            continue
        c = dict(r.coords)
        if x_name not in c:
            continue
        g = tuple((n, c[n]) for n in group_names if n in c)
        out.setdefault(g, []).append((c[x_name], r.mean, r.min, r.max, r.ci95))
    return {g: np.array(sorted(v), dtype=float).T for g, v in out.items()}


def _label(group) -> str:
    return ", ".join(f"{n}={v}" for n, v in group) or "all"


def _figure_specs(records):
    metrics = {r.metric for r in records}
    nk = "final_fitness" in metrics
    specs = []
    if nk:
        grp = ("n", "g", "p_delete")
        specs += [
            ("fitness_vs_k", "final_fitness", "k", grp, "K", "final fitness", "minmax"),
            ("length_vs_k", "final_length", "k", grp, "K", "final length N'", "minmax"),
            ("walk_length", "walk_length", "k", grp, "K", "walk length to optimum", "bar"),
        ]
        for j in range(1, WAITING_GENES + 1):
            specs.append((f"waiting_gene_{j}", f"growth_{j}", "k", grp, "K",
                          f"generation of growth event {j}", "bar"))
    else:
        grp = ("types_added",)
        specs += [
            ("ga_best_fitness", "best_fitness", "generation", grp, "generation", "best fitness", "band"),
            ("ga_mean_fitness", "mean_fitness", "generation", grp, "generation", "population mean fitness", "band"),
            ("ga_type_count", "best_type_count", "generation", grp, "generation", "best individual types", "band"),
        ]
    return [s for s in specs if s[1] in metrics]


def emit_plots(records: Sequence[AggregateRecord], out_dir) -> list[Path]:
    """Render one figure per available metric and write the CSV behind each.

    Plotting errors (or a missing matplotlib) leave the CSVs in place and
    raise a warning instead.  Returns the image paths written.
    """
    if not records:
        raise ValueError("no records to plot")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    specs = _figure_specs(records)
    for name, metric, x, grp, *_ in specs:
        data = _series(records, metric, x, grp)
        rows = [dict(g, **{x: xv, "mean": m, "min": lo, "max": hi, "ci95": ci})
                for g, arr in data.items() for xv, m, lo, hi, ci in arr.T]
        cols = list(dict.fromkeys(n for g in data for n, _ in g)) + [x, "mean", "min", "max", "ci95"]
        write_rows(out / f"{name}.csv", f"# vlevo plot data v1 {name}", cols, rows)
    try:
        import matplotlib

        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except Exception as exc:  # pragma: no cover - depends on the install
        warnings.warn(f"plotting unavailable ({exc}); wrote CSV only", RuntimeWarning, stacklevel=2)
        return []
    images = []
    for name, metric, x, grp, xlabel, ylabel, style in specs:
        data = _series(records, metric, x, grp)
        try:
            fig, ax = plt.subplots(figsize=(6, 4))
            width = 0.8 / max(len(data), 1)
            for i, (g, (xs, mean, lo, hi, ci)) in enumerate(sorted(data.items())):
                if style == "minmax":
                    yerr = np.clip(np.vstack([mean - lo, hi - mean]), 0.0, None)
                    ax.errorbar(xs, mean, yerr=yerr, marker="o", capsize=3, label=_label(g))
                elif style == "bar":
                    ax.bar(xs + (i - (len(data) - 1) / 2) * width, mean, width, label=_label(g))
                else:
                    ax.plot(xs, mean, label=_label(g))
                    ok = np.isfinite(ci)
                    ax.fill_between(xs[ok], (mean - ci)[ok], (mean + ci)[ok], alpha=0.25)
            ax.set_xlabel(xlabel)
            ax.set_ylabel(ylabel)
            if len(data) > 1:
                ax.legend(fontsize="small")
            fig.tight_layout()
            path = out / f"{name}.png"
            fig.savefig(path, dpi=100)
            images.append(path)
        except Exception as exc:
            warnings.warn(f"plot {name} failed ({exc}); CSV kept", RuntimeWarning, stacklevel=2)
        finally:
            plt.close("all")
    return images


def default_workers() -> int:
    return max(1, os.cpu_count() or 1)
