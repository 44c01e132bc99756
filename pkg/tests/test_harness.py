import csv
import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dmatch.core import MapGraph
from dmatch.cover import verify_cover
from dmatch.errors import PreconditionError
from dmatch.harness import (
    CellResult,
    ExperimentGrid,
    ResultTable,
    RunResult,
    emit_results,
    iou_error,
    random_cover_seed,
    read_heatmap,
    read_results,
    run_cover_study,
    run_grid,
    solve_and_score,
)
from dmatch.solver import SolverConfig
from dmatch.synth import corrupt, generate


def graph(blocks, counts=None):
    counts = counts or {0: 2, 1: 2}
    return MapGraph(counts, {k: np.array(v, dtype=float) for k, v in blocks.items()})


class TestIOU:
    def test_equal(self):
        g = graph({(0, 1): [[1, 0], [0, 1]]})
        assert iou_error(g, g) == 0.0

    def test_disjoint(self):
        assert iou_error(graph({(0, 1): [[1, 0], [0, 0]]}), graph({(0, 1): [[0, 0], [0, 1]]})) == 1.0

    def test_two_thirds(self):
        est = graph({(0, 1): [[1, 0], [0, 1]]})
        gt = graph({(0, 1): [[1, 0], [1, 0]]})
        assert iou_error(est, gt) == pytest.approx(1 - 1 / 3)

    def test_empty_sets(self):
        assert iou_error(graph({(0, 1): [[0, 0], [0, 0]]}), graph({(0, 1): [[0, 0], [0, 0]]})) == 0.0

    def test_uncovered_pairs_ignored(self):
        counts = {0: 1, 1: 1, 2: 1}
        est = graph({(0, 1): [[1]]}, counts)
        gt = graph({(0, 1): [[1]], (1, 2): [[1]]}, counts)
        assert iou_error(est, gt) == 0.0

    def test_no_common_coverage(self, caplog):
        est = graph({(5, 6): [[1]]}, {5: 1, 6: 1})
        assert math.isnan(iou_error(est, graph({(0, 1): [[1, 0], [0, 1]]})))
        assert "covers no pair" in caplog.text

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 2**16 - 1), st.integers(0, 2**16 - 1))
    def test_symmetric_and_bounded(self, a, b):
        def bits(x):
            return np.array([(x >> k) & 1 for k in range(16)], dtype=float).reshape(4, 4)
        counts = {0: 4, 1: 4}
        ga, gb = graph({(0, 1): bits(a)}, counts), graph({(0, 1): bits(b)}, counts)
        e = iou_error(ga, gb)
        assert e == iou_error(gb, ga)
        assert 0.0 <= e <= 1.0
        assert (e == 0.0) == (a == b or (a == 0 and b == 0))


class TestGrid:
    def test_rejects_bad_axes(self):
        with pytest.raises(PreconditionError):
            ExperimentGrid(("n", [20, 10]), ("rhoe", [0.0]))
        with pytest.raises(PreconditionError):
            ExperimentGrid(("alpha", [1]), ("rhoe", [0.0]))
        with pytest.raises(PreconditionError):
            ExperimentGrid(("n", [20]), ("rhoe", [0.0]), method="magic")
        with pytest.raises(PreconditionError):
            ExperimentGrid(("n", [20]), ("rhoe", [0.0]), repetitions=0)

    @pytest.mark.parametrize("method", ["dmatch-sparse", "dmatch-dense", "global", "global-sparse"])
    def test_noiseless_cell(self, method):
        grid = ExperimentGrid(("n", [12]), ("rhoe", [0.0]), method,
                              {"n": 12, "r": 6, "rho0": 0.8, "rhoe": 0.0}, repetitions=2)
        table = run_grid(grid)
        assert table.heatmap(method).tolist() == [[0.0]]
        assert table.cell(method, 12, 0.0).refused == 0

    def test_reproducible_across_workers(self):
        grid = ExperimentGrid(("n", [10, 12]), ("rhoe", [0.1]), "dmatch-dense",
                              {"n": 12, "r": 6, "rho0": 0.8, "rhoe": 0.1}, repetitions=1,
                              solver={"max_iters": 40})
        a, b = run_grid(grid), run_grid(grid, workers=2)
        assert np.array_equal(a.heatmap("dmatch-dense"), b.heatmap("dmatch-dense"))
        assert [c.mean_iterations for c in a.cells] == [c.mean_iterations for c in b.cells]

    def test_refusal_is_recorded(self):
        inst = corrupt(generate(3, 4, 1.0, 0), 0.0, 0)
        bad = verify_cover([{0, 1}, {1, 2}, {0, 2}])
        run = solve_and_score("dmatch", inst.observed, inst.gt_graph, bad, SolverConfig(m=8), 0)
        assert run.refused and math.isnan(run.error)
        cell = CellResult("dmatch-sparse", {"n": 3, "rhoe": 0.0}, [run])
        assert cell.refused == 1 and math.isnan(cell.mean_error)


class TestCoverStudy:
    def test_random_cover_seed_differs(self):
        assert len({random_cover_seed(s) for s in range(20)} - set(range(20))) == 20

    def test_equal_rates_small(self):
        kw = dict(r=6, rho0=0.8, seeds=[0, 1], solver={"max_iters": 300})
        gt = run_cover_study(15, [0.1], [0.1], "ground-truth", **kw)
        rnd = run_cover_study(15, [0.1], [0.1], "random", **kw)
        assert gt.methods == ["dmatch-sparse-ground-truth"]
        assert rnd.methods == ["dmatch-sparse-random"]
        assert abs(gt.heatmap(gt.methods[0])[0, 0] - rnd.heatmap(rnd.methods[0])[0, 0]) <= 0.05

    def test_rejects_unknown_mode(self):
        with pytest.raises(PreconditionError):
            run_cover_study(15, [0.1], [0.1], "best")


def fake_table(v1, v2):
    cells = []
    for k, (a, b) in enumerate(itertools.product(v1, v2)):
        runs = [RunResult(s, 0.1 * k + 0.0123457 * s, 10 + s, 0.5, True, 1e-5) for s in range(3)]
        cells.append(CellResult("dmatch-dense", {"n": a, "rhoe": b}, runs))
    return ResultTable(("n", "rhoe"), (v1, v2), cells)


class TestEmit:
    def test_heatmap_shape(self, tmp_path):
        paths = emit_results(fake_table([20, 35], [0.0, 0.1]), tmp_path)
        assert [p.name for p in paths] == ["results.csv", "heatmap_dmatch-dense.csv"]
        with open(paths[1]) as fh:
            rows = list(csv.reader(fh))
        assert len(rows) == 3 and all(len(r) == 3 for r in rows)

    def test_empty_grid(self, tmp_path):
        paths = emit_results(ResultTable(("n", "rhoe"), ([], []), []), tmp_path)
        for p in paths:
            assert len(p.read_text().splitlines()) == 1

    def test_round_trip(self, tmp_path):
        table = fake_table([20, 35, 50], [0.0, 0.2])
        emit_results(table, tmp_path)
        rows = read_results(tmp_path)
        for row, cell in zip(rows, table.cells):
            assert row["mean_error"] == round(cell.mean_error, 6)
            assert row["std_error"] == round(cell.std_error, 6)
            assert row["value1"] == cell.params["n"]
        index, cols, data = read_heatmap(tmp_path / "heatmap_dmatch-dense.csv")
        assert index == [20, 35, 50] and cols == [0.0, 0.2]
        np.testing.assert_array_equal(data, np.round(table.heatmap("dmatch-dense"), 6))

    def test_unwritable_path(self, tmp_path):
        blocker = tmp_path / "file"
        blocker.write_text("")
        with pytest.raises(OSError, match="cannot write results"):
            emit_results(fake_table([1], [0.0]), blocker / "sub")
