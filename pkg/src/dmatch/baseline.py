"""Global joint matching: the solver run on a single node holding every object."""

from __future__ import annotations

from dmatch.core import BlockMatrix, MapGraph
from dmatch.cover import CoverComplex, verify_cover
from dmatch.solver import SolverConfig, SolveReport, run_admm


def match_global(g: MapGraph, cfg: SolverConfig) -> tuple[BlockMatrix, SolveReport]:
    """Low-rank recovery over the full matching matrix; returns the rounded matrix."""
    cover = verify_cover([set(g.objects)], g)
    sol = run_admm(g, cover, cfg)
    return sol.rounded[0], sol.report


def sparsify(g: MapGraph, cover: CoverComplex) -> MapGraph:
    """Drop every block whose objects never share a cover node."""
    return MapGraph(
        g.point_counts,
        {(i, j): b for (i, j), b in g.blocks.items() if cover.co_resident(i, j)},
    )


def match_global_sparse(g: MapGraph, cover: CoverComplex,
                        cfg: SolverConfig) -> tuple[BlockMatrix, SolveReport]:
    """Global recovery on the sparse map graph induced by ``cover``."""
    return match_global(sparsify(g, cover), cfg)
