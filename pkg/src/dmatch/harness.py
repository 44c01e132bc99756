"""Matching error metric and synthetic experiment grids."""

from __future__ import annotations

import csv
import itertools
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from dmatch.baseline import match_global, sparsify
from dmatch.core import MapGraph
from dmatch.cover import CoverComplex
from dmatch.errors import CoverRefusedError, PreconditionError
from dmatch.solver import SolverConfig, run_admm
from dmatch.synth import corrupt, corrupt_clustered, generate, make_dense_cover, make_sparse_cover

log = logging.getLogger(__name__)

METHODS = ("dmatch-sparse", "dmatch-dense", "global", "global-sparse")
AXES = ("n", "r", "rho0", "rhoe")


def correspondences(g: MapGraph, pairs=None) -> set[tuple[int, int, int, int]]:
    """``(i, a, j, b)`` for every 1-entry of every block with ``i < j``."""
    out = set()
    for (i, j), blk in g.blocks.items():
        if pairs is not None and (i, j) not in pairs:
            continue
        for a, b in zip(*np.nonzero(blk >= 0.5)):
            out.add((i, int(a), j, int(b)))
    return out


def iou_error(x_star: MapGraph, x_gt: MapGraph) -> float:
    """One minus the Jaccard index of the two correspondence sets.

    Only object pairs present in ``x_star`` are compared. Returns 0 when both
    sets are empty and NaN when ``x_star`` covers no pair known to ``x_gt``.
    """
    pairs = {p for p in x_star.blocks if p in x_gt.blocks or _both_known(p, x_gt)}
    if not pairs:
        log.warning("iou_error: solution covers no pair of the ground truth")
        return math.nan
    got = correspondences(x_star, pairs)
    want = correspondences(x_gt, pairs)
    union = len(got | want)
    if union == 0:
        return 0.0
    return 1.0 - len(got & want) / union


def _both_known(pair, g: MapGraph) -> bool:
    return pair[0] in g.point_counts and pair[1] in g.point_counts


@dataclass
class ExperimentGrid:
    """Two swept parameters, fixed parameters and one solver method."""

    axis1: tuple[str, list]
    axis2: tuple[str, list]
    method: str = "dmatch-dense"
    fixed: dict = field(default_factory=lambda: {"n": 50, "r": 20, "rho0": 0.6, "rhoe": 0.2})
    repetitions: int = 5
    seeds: list[int] | None = None
    solver: dict = field(default_factory=dict)  # SolverConfig overrides; m defaults to 2r
    overlap_fraction: float = 0.2

    def __post_init__(self):
        if self.method not in METHODS:
            raise PreconditionError(f"unknown method {self.method!r}; pick one of {METHODS}")
        if self.repetitions < 1:
            raise PreconditionError("repetitions must be at least 1")
        for name, values in (self.axis1, self.axis2):
            if name not in AXES:
                raise PreconditionError(f"cannot sweep {name!r}; axes are {AXES}")
            if any(b <= a for a, b in zip(values, values[1:])):
                raise PreconditionError(f"axis {name} values must be strictly increasing")
        if self.seeds is None:
            self.seeds = list(range(self.repetitions))
        if len(self.seeds) != self.repetitions:
            raise PreconditionError("need one seed per repetition")

    def cells(self):
        (n1, v1), (n2, v2) = self.axis1, self.axis2
        for a, b in itertools.product(v1, v2):
            yield {**self.fixed, n1: a, n2: b}


@dataclass
class RunResult:
    seed: int
    error: float
    iterations: int
    wall_seconds: float
    converged: bool
    consensus_residual: float
    refused: bool = False


@dataclass
class CellResult:
    method: str
    params: dict
    runs: list[RunResult]

    def _ok(self):
        return [r for r in self.runs if not r.refused and not math.isnan(r.error)]

    @property
    def mean_error(self) -> float:
        ok = self._ok()
        return float(np.mean([r.error for r in ok])) if ok else math.nan

    @property
    def std_error(self) -> float:
        ok = self._ok()
        return float(np.std([r.error for r in ok])) if ok else math.nan

    @property
    def mean_iterations(self) -> float:
        ok = self._ok()
        return float(np.mean([r.iterations for r in ok])) if ok else math.nan

    @property
    def mean_wall(self) -> float:
        ok = self._ok()
        return float(np.mean([r.wall_seconds for r in ok])) if ok else math.nan

    @property
    def refused(self) -> int:
        return sum(r.refused for r in self.runs)


@dataclass
class ResultTable:
    axes: tuple[str, str]
    axis_values: tuple[list, list]
    cells: list[CellResult]

    def cell(self, method: str, a, b) -> CellResult:
        for c in self.cells:
            if c.method == method and c.params[self.axes[0]] == a and c.params[self.axes[1]] == b:
                return c
        raise KeyError((method, a, b))

    def heatmap(self, method: str) -> np.ndarray:
        v1, v2 = self.axis_values
        return np.array([[self.cell(method, a, b).mean_error for b in v2] for a in v1])

    @property
    def methods(self) -> list[str]:
        return sorted({c.method for c in self.cells})


def solver_config(params: dict, seed: int, overrides: dict | None = None) -> SolverConfig:
    cfg = {"m": 2 * int(params["r"]), "seed": seed}
    cfg.update(overrides or {})
    return SolverConfig(**cfg)


def solve_and_score(method: str, observed: MapGraph, gt: MapGraph, cover: CoverComplex | None,
                    cfg: SolverConfig, seed: int) -> RunResult:
    t0 = time.perf_counter()
    try:
        if method.startswith("dmatch"):
            sol = run_admm(observed, cover, cfg)
            est = sol.to_map_graph(observed.point_counts)
            report = sol.report
        else:
            g = sparsify(observed, cover) if method == "global-sparse" else observed
            rounded, report = match_global(g, cfg)
            est = rounded.to_map_graph()
            if method == "global-sparse":
                # score only the pairs the sparse input covers
                est = sparsify(est, cover)
    except CoverRefusedError as exc:
        log.warning("seed %d: %s", seed, exc)
        return RunResult(seed, math.nan, 0, time.perf_counter() - t0, False, math.nan, refused=True)
    final = report.final
    return RunResult(
        seed,
        iou_error(est, gt),
        report.iterations,
        time.perf_counter() - t0,
        report.converged,
        final.max_consensus_residual if final else 0.0,
    )


def _cover_for(method: str, n: int, overlap: float, seed: int) -> CoverComplex | None:
    if method in ("dmatch-sparse", "global-sparse"):
        return make_sparse_cover(n, 3, overlap, seed)
    if method == "dmatch-dense":
        return make_dense_cover(n, 3, overlap, seed)
    return None


def _run_cell(grid: ExperimentGrid, params: dict) -> CellResult:
    runs = []
    for seed in grid.seeds:
        inst = generate(int(params["n"]), int(params["r"]), float(params["rho0"]), seed)
        inst = corrupt(inst, float(params["rhoe"]), seed)
        cover = _cover_for(grid.method, int(params["n"]), grid.overlap_fraction, seed)
        cfg = solver_config(params, seed, grid.solver)
        runs.append(solve_and_score(grid.method, inst.observed, inst.gt_graph, cover, cfg, seed))
    return CellResult(grid.method, params, runs)


def _map_cells(fn, jobs, workers: int):
    if workers <= 1:
        return [fn(*job) for job in jobs]
    with ProcessPoolExecutor(workers) as pool:
        return list(pool.map(fn, *zip(*jobs)))


def run_grid(grid: ExperimentGrid, workers: int = 1) -> ResultTable:
    """Generate, corrupt, cover, solve and score every cell of ``grid``."""
    jobs = [(grid, params) for params in grid.cells()]
    cells = _map_cells(_run_cell, jobs, workers)
    return ResultTable(
        (grid.axis1[0], grid.axis2[0]), (list(grid.axis1[1]), list(grid.axis2[1])), cells
    )


def random_cover_seed(seed: int) -> int:
    """Seed for the random cover paired with instance ``seed``; independent of the generating cover."""
    return int(np.random.SeedSequence([seed, 0x5EED]).generate_state(1)[0])


def _run_cover_cell(n, r, rho0, rho_in, rho_out, mode, kind, seeds, overlap, solver):
    runs = []
    make = make_sparse_cover if kind == "sparse" else make_dense_cover
    params = {"n": n, "r": r, "rho0": rho0, "rho_in": rho_in, "rho_out": rho_out}
    for seed in seeds:
        gt_cover = make(n, 3, overlap, seed)
        inst = corrupt_clustered(generate(n, r, rho0, seed), gt_cover, rho_in, rho_out, seed)
        # the random cover reuses the three-way construction, hence the same size profile
        cover = gt_cover if mode == "ground-truth" else make(n, 3, overlap, random_cover_seed(seed))
        cfg = solver_config(params, seed, solver)
        runs.append(solve_and_score("dmatch", inst.observed, inst.gt_graph, cover, cfg, seed))
    return CellResult(f"dmatch-{kind}-{mode}", params, runs)


def run_cover_study(n: int, rho_in: list[float], rho_out: list[float], cover_mode: str = "ground-truth",
                    cover_kind: str = "sparse", r: int = 20, rho0: float = 0.6,
                    seeds: list[int] | None = None, overlap_fraction: float = 0.2,
                    solver: dict | None = None, workers: int = 1) -> ResultTable:
    """DMatch error under clustered noise, on the generating cover or a random one."""
    if cover_mode not in ("ground-truth", "random"):
        raise PreconditionError(f"unknown cover mode {cover_mode!r}")
    if cover_kind not in ("sparse", "dense"):
        raise PreconditionError(f"unknown cover kind {cover_kind!r}")
    for values in (rho_in, rho_out):
        if any(b <= a for a, b in zip(values, values[1:])):
            raise PreconditionError("rate axes must be strictly increasing")
    seeds = list(range(5)) if seeds is None else list(seeds)
    jobs = [
        (n, r, rho0, a, b, cover_mode, cover_kind, seeds, overlap_fraction, solver or {})
        for a in rho_in for b in rho_out
    ]
    cells = _map_cells(_run_cover_cell, jobs, workers)
    return ResultTable(("rho_in", "rho_out"), (list(rho_in), list(rho_out)), cells)


RESULT_COLUMNS = ["method", "axis1", "value1", "axis2", "value2", "mean_error", "std_error",
                  "mean_iterations", "mean_wall_seconds", "runs", "refused"]


def emit_results(table: ResultTable, path) -> list[Path]:
    """Write ``results.csv`` and one ``heatmap_<method>.csv`` per method into ``path``."""
    out = Path(path)
    try:
        out.mkdir(parents=True, exist_ok=True)
        written = [out / "results.csv"]
        with open(written[0], "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(RESULT_COLUMNS)
            a1, a2 = table.axes
            for c in table.cells:
                w.writerow([
                    c.method, a1, _fmt(c.params[a1]), a2, _fmt(c.params[a2]),
                    _fmt(c.mean_error), _fmt(c.std_error), _fmt(c.mean_iterations),
                    _fmt(c.mean_wall), len(c.runs), c.refused,
                ])
        v1, v2 = table.axis_values
        for method in table.methods or ["none"]:
            p = out / f"heatmap_{method}.csv"
            with open(p, "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow([f"{table.axes[0]}\\{table.axes[1]}", *map(_fmt, v2)])
                if table.cells:
                    for a, row in zip(v1, table.heatmap(method)):
                        w.writerow([_fmt(a), *map(_fmt, row)])
            written.append(p)
    except OSError as exc:
        raise OSError(f"cannot write results to {out}: {exc}") from exc
    return written


def _fmt(x) -> str:
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return f"{float(x):.6f}"


def read_results(path) -> list[dict]:
    """Parse ``results.csv`` back into row dicts with numeric fields as floats."""
    with open(Path(path) / "results.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    numeric = set(RESULT_COLUMNS) - {"method", "axis1", "axis2"}
    return [{k: (float(v) if k in numeric else v) for k, v in row.items()} for row in rows]


def read_heatmap(path) -> tuple[list[float], list[float], np.ndarray]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    cols = [float(x) for x in rows[0][1:]]
    index = [float(r[0]) for r in rows[1:]]
    data = np.array([[float(x) for x in r[1:]] for r in rows[1:]]).reshape(len(index), len(cols))
    return index, cols, data
