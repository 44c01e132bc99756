"""Acceptance suite: one test per criterion, each printing a single PASS/FAIL line.

The lines are also collected into the terminal summary. Criteria 6 and 7 take
tens of minutes on one core and carry the ``slow`` marker.
"""

import itertools
import os
import time

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES
from dmatch.baseline import match_global, match_global_sparse
from dmatch.core import MapGraph, is_cycle_consistent
from dmatch.cover import verify_cover
from dmatch.harness import ExperimentGrid, iou_error, run_cover_study, run_grid
from dmatch.solver import Message, SolverConfig, project_C, run_admm, solve_X0, stitch
from dmatch.synth import corrupt, corrupt_clustered, generate, make_dense_cover, make_sparse_cover

from oracles import qp_projection, random_node, x_update_residual

WORKERS = os.cpu_count() or 1

# runs shared between criteria: 5, 6 and 7 feed 9; 5 feeds 10
SHARED: dict = {"consensus": {}, "noiseless": None}


def record(number, ok, detail):
    line = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


def unit_graph(n, edges, points):
    return MapGraph({i: points for i in range(n)}, {e: np.eye(points) for e in edges})


def test_criterion_01_topology_verdicts():
    t0 = time.perf_counter()
    tri = verify_cover([{0, 1}, {1, 2}, {0, 2}], unit_graph(3, [(0, 1), (1, 2), (0, 2)], 2))
    solid = verify_cover([{0, 1}, {0, 2}, {0, 3}], unit_graph(4, [(0, 1), (0, 2), (0, 3)], 2))
    tetra = verify_cover([set(c) for c in itertools.combinations(range(4), 3)],
                         unit_graph(4, list(itertools.combinations(range(4), 2)), 2))
    got = [(v.verdict.h1_rank, v.verdict.passed) for v in (tri, solid, tetra)]
    dt = time.perf_counter() - t0
    ok = got == [(1, False), (0, True), (0, True)] and dt < 1.0
    assert record(1, ok, f"(h1, accept) = {got}; {dt:.3f}s (< 1s)")


def test_criterion_02_stitched_consistency():
    t0 = time.perf_counter()
    qualifying = failures = 0
    for seed in range(60):
        rhoe = (0.0, 0.05, 0.1)[seed % 3]
        inst = corrupt(generate(12, 8, 0.7, seed), rhoe, seed)
        for make in (make_sparse_cover, make_dense_cover):
            cover = make(12, seed=seed)
            sol = run_admm(inst.observed, cover, SolverConfig(m=16, seed=seed))
            if not cover.verdict.passed:
                continue
            if not all(is_cycle_consistent(bm.to_map_graph()) for bm in sol.rounded):
                continue
            qualifying += 1
            failures += not is_cycle_consistent(stitch(sol, inst.point_counts))
    dt = time.perf_counter() - t0
    ok = qualifying >= 50 and failures == 0 and dt < 300
    assert record(2, ok, f"{qualifying - failures}/{qualifying} qualifying runs stitch consistently "
                         f"(120 runs, n=12, r=8, rho_e<=0.1); {dt:.0f}s (< 300s)")


def test_criterion_03_projection_oracle():
    rng = np.random.default_rng(2024)
    t0 = time.perf_counter()
    worst = 0.0
    for _ in range(200):
        sizes = []
        total = int(rng.integers(1, 7))
        while sum(sizes) < total:
            sizes.append(int(rng.integers(1, total - sum(sizes) + 1)))
        layout = tuple(enumerate(sizes))
        x0 = rng.uniform(-1, 2, size=(total, total))
        worst = max(worst, float(np.abs(project_C(x0, layout) - qp_projection(x0, layout)).max()))
    dt = time.perf_counter() - t0
    assert record(3, worst <= 1e-6 and dt < 60, f"max entrywise gap {worst:.2e} (<= 1e-6) over 200 "
                                                f"instances; {dt:.1f}s (< 60s)")


def test_criterion_04_x_update_oracle():
    rng = np.random.default_rng(7)
    t0 = time.perf_counter()
    worst = 0.0
    for _ in range(100):
        sizes = rng.integers(1, 5, size=int(rng.integers(1, 6)))
        st = random_node(rng, sizes, m=4, n_neighbors=int(rng.integers(0, 5)))
        cfg = SolverConfig(m=4, mu=float(rng.uniform(0.5, 200)), beta=float(rng.uniform(0.01, 10)))
        inbox = {j: Message(j, 0, rng.random((len(i),) * 2), 0) for j, i in st.overlaps.items()}
        x0 = solve_X0(st, inbox, cfg)
        worst = max(worst, x_update_residual(st, inbox, cfg, x0, relative=True))
    dt = time.perf_counter() - t0
    assert record(4, worst <= 1e-8 and dt < 60, f"max relative residual {worst:.2e} (<= 1e-8) over 100 "
                                                f"nodes; {dt:.1f}s (< 60s)")


def noiseless_runs():
    out = []
    for rho0, make, seed in itertools.product((0.6, 1.0), (make_sparse_cover, make_dense_cover), range(3)):
        inst = generate(20, 20, rho0, seed)
        sol = run_admm(inst.observed, make(20, seed=seed), SolverConfig(m=40, seed=seed))
        out.append(((rho0, make.__name__, seed), inst, sol))
    return out


def test_criterion_05_noiseless_recovery():
    t0 = time.perf_counter()
    runs = noiseless_runs()
    dt = time.perf_counter() - t0
    SHARED["noiseless"] = runs
    errors = [iou_error(sol.to_map_graph(inst.point_counts), inst.gt_graph) for _, inst, sol in runs]
    iters = [sol.report.iterations for *_, sol in runs]
    for key, _, sol in runs:
        if sol.report.converged:
            SHARED["consensus"][("c5", key)] = sol.report.final.max_consensus_residual
    ok = all(e == 0.0 for e in errors) and max(iters) <= 300 and dt < 120
    assert record(5, ok, f"max IOU {max(errors):.4f} (== 0), max iterations {max(iters)} (<= 300) over "
                         f"{len(runs)} runs; {dt:.0f}s (< 120s)")


@pytest.mark.slow
def test_criterion_06_error_grid():
    rates = [0.0, 0.1, 0.2, 0.3, 0.4, 0.5]
    sizes = [20, 35, 50]
    fixed = {"n": 50, "r": 20, "rho0": 0.6, "rhoe": 0.2}
    t0 = time.perf_counter()
    tables = {
        m: run_grid(ExperimentGrid(("n", sizes), ("rhoe", rates), m, fixed, repetitions=5), WORKERS)
        for m in ("dmatch-dense", "global")
    }
    dt = time.perf_counter() - t0
    for m, t in tables.items():
        for c in t.cells:
            for r in c.runs:
                if r.converged:
                    SHARED["consensus"][("c6", m, c.params["n"], c.params["rhoe"], r.seed)] = r.consensus_residual
    dense, glob = tables["dmatch-dense"].heatmap("dmatch-dense"), tables["global"].heatmap("global")
    print("dense mean error (rows n, cols rho_e):\n", np.round(dense, 4))
    print("global mean error:\n", np.round(glob, 4))
    low = [k for k, r in enumerate(rates) if r <= 0.2]
    part1 = float(dense[2, low].max())
    steps = [dense[i + 1, k] - dense[i, k] for k, r in enumerate(rates) if r <= 0.4 for i in range(2)]
    part2 = float(max(steps))
    mid = [k for k, r in enumerate(rates) if r <= 0.3]
    part3 = float(np.abs(dense[:, mid] - glob[:, mid]).max())
    ok = part1 <= 0.05 and part2 <= 0.02 and part3 <= 0.05 and dt <= 1800
    assert record(6, ok, f"(i) n=50 dense error max {part1:.4f} (<= 0.05); (ii) largest increase in n "
                         f"{part2:+.4f} (<= 0.02); (iii) max |dense-global| {part3:.4f} (<= 0.05); "
                         f"{dt:.0f}s (<= 1800s)")


@pytest.mark.slow
def test_criterion_07_cover_study():
    kw = dict(r=20, rho0=0.6, seeds=list(range(5)), workers=WORKERS)
    t0 = time.perf_counter()
    gt = run_cover_study(50, [0.1, 0.2], [0.1, 0.2, 0.3, 0.4, 0.5], "ground-truth", **kw)
    rnd = run_cover_study(50, [0.1], [0.5], "random", **kw)
    dt = time.perf_counter() - t0
    for t in (gt, rnd):
        for c in t.cells:
            for r in c.runs:
                if r.converged:
                    SHARED["consensus"][("c7", c.method, c.params["rho_in"], c.params["rho_out"], r.seed)] = \
                        r.consensus_residual
    heat = gt.heatmap(gt.methods[0])
    print("ground-truth cover mean error (rows rho_in, cols rho_out):\n", np.round(heat, 4))
    variation = float((heat.max(axis=1) - heat.min(axis=1)).max())
    gt_cell = gt.cell(gt.methods[0], 0.1, 0.5).mean_error
    rnd_cell = rnd.cell(rnd.methods[0], 0.1, 0.5).mean_error
    gap = rnd_cell - gt_cell
    ok = variation <= 0.05 and gap >= 0.02 and dt <= 1200
    assert record(7, ok, f"(i) rho_out variation {variation:.4f} (<= 0.05); (ii) random {rnd_cell:.4f} "
                         f"minus ground-truth {gt_cell:.4f} = {gap:+.4f} (>= 0.02); {dt:.0f}s (<= 1200s)")


def test_criterion_08_sparse_graph_robustness():
    full, sparse = [], []
    for seed in range(5):
        cover = make_sparse_cover(50, seed=seed)
        inst = corrupt_clustered(generate(50, 20, 0.6, seed), cover, 0.05, 0.5, seed)
        cfg = SolverConfig(m=40, seed=seed)
        g, _ = match_global(inst.observed, cfg)
        s, _ = match_global_sparse(inst.observed, cover, cfg)
        full.append(iou_error(g.to_map_graph(), inst.gt_graph))
        # the sparse solve is scored on the pairs its input covers
        s = s.to_map_graph()
        s = MapGraph(s.point_counts, {p: b for p, b in s.blocks.items() if cover.co_resident(*p)})
        sparse.append(iou_error(s, inst.gt_graph))
    a, b = float(np.mean(sparse)), float(np.mean(full))
    assert record(8, a <= b, f"sparse-graph mean error {a:.4f} <= full-graph {b:.4f} (5 seeds)")


def test_criterion_09_consensus_invariant():
    if SHARED["noiseless"] is None:
        pytest.skip("criterion 5 did not run")
    tol = SolverConfig().tol
    vals = SHARED["consensus"]
    sources = sorted({k[0] for k in vals})
    worst = max(vals.values())
    ok = worst <= 10 * tol
    assert record(9, ok, f"max consensus residual {worst:.2e} (<= {10 * tol:.0e}) over {len(vals)} "
                         f"converged runs from {', '.join(sources)}")


def test_criterion_10_determinism():
    if SHARED["noiseless"] is None:
        pytest.skip("criterion 5 did not run")
    again = noiseless_runs()
    same = True
    for (_, _, a), (_, _, b) in zip(SHARED["noiseless"], again):
        ta = [(r.factor_residuals, r.consensus_residuals) for r in a.report.trace]
        tb = [(r.factor_residuals, r.consensus_residuals) for r in b.report.trace]
        same &= ta == tb
        same &= all(x.X.tobytes() == y.X.tobytes() for x, y in zip(a.states, b.states))
        same &= all(x == y for x, y in zip(a.rounded, b.rounded))
    assert record(10, same, f"{len(again)} repeated runs bitwise identical: {same}")


def test_criterion_11_scaling():
    inst = corrupt(generate(60, 20, 0.6, 0), 0.1, 0)
    cfg = SolverConfig(m=40, max_iters=50, tol=0.0)
    covers = {K: make_sparse_cover(60, K=K, overlap_fraction=0.1, seed=0) for K in (3, 6)}
    fastest = {}
    for _ in range(5):
        # alternate so slow drift of the machine hits both configurations
        for K in (3, 6):
            trace = run_admm(inst.observed, covers[K], cfg).report.trace
            per_node = np.min([r.node_seconds for r in trace], axis=0)
            fastest[K] = per_node if K not in fastest else np.minimum(fastest[K], per_node)
    # a node's fastest iteration estimates its intrinsic cost; the slowest node sets the round time
    timing = {K: float(v.max()) for K, v in fastest.items()}
    timing.update({(K, "size"): len(c.nodes[0]) for K, c in covers.items()})
    ratio = timing[6] / timing[3]
    assert record(11, ratio <= 0.6,
                  f"per-iteration critical path K=6 ({timing[(6, 'size')]} objects/node) "
                  f"{timing[6] * 1e3:.1f}ms vs K=3 ({timing[(3, 'size')]} objects/node) "
                  f"{timing[3] * 1e3:.1f}ms, ratio {ratio:.2f} (<= 0.6)")
