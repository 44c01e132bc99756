"""Synthetic partial-permutation instances and the three-way covers used with them."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from dmatch.core import MapGraph, UniverseAssignment, ground_truth_matrix
from dmatch.cover import CoverComplex, verify_cover
from dmatch.errors import PreconditionError


@dataclass(frozen=True)
class Instance:
    params: dict
    truth: UniverseAssignment
    observed: MapGraph
    gt_graph: MapGraph

    @property
    def point_counts(self) -> dict[int, int]:
        return dict(self.gt_graph.point_counts)


def _pair_rng(seed: int, i: int, j: int) -> np.random.Generator:
    # one stream per object pair keeps a block's corruption independent of
    # the rates and draws used for every other pair
    return np.random.default_rng(np.random.SeedSequence([seed, i, j]))


def generate(n: int, r: int, rho0: float, seed: int = 0) -> Instance:
    """Uncorrupted instance: ``n`` objects each observing a random part of an ``r``-point universe."""
    if n < 2:
        raise PreconditionError("need at least two objects")
    if r < 1:
        raise PreconditionError("universe size must be positive")
    if not 0 < rho0 <= 1:
        raise PreconditionError("rho0 must lie in (0, 1]")
    rng = np.random.default_rng(seed)
    assign = {}
    for oid in range(n):
        seen = np.zeros(0, dtype=int)
        while seen.size == 0:
            seen = np.nonzero(rng.random(r) < rho0)[0]
        seen = rng.permutation(seen)
        a = np.zeros((seen.size, r))
        a[np.arange(seen.size), seen] = 1.0
        assign[oid] = a
    truth = UniverseAssignment(r, assign)
    full = ground_truth_matrix(truth)
    gt = full.to_map_graph()
    return Instance({"n": n, "r": r, "rho0": rho0, "seed": seed}, truth, gt, gt)


def _corrupt_block(blk: np.ndarray, rate: float, rng: np.random.Generator,
                   independent: bool = False) -> tuple[np.ndarray, int, int]:
    """Return corrupted block, number of true entries, number removed."""
    out = blk.copy()
    rows, cols = np.nonzero(blk)
    removed = rng.random(rows.size) < rate
    out[rows[removed], cols[removed]] = 0.0
    if independent:
        sources = [a for a in range(out.shape[0]) if out[a].sum() == 0 and rng.random() < rate]
        banned = {int(a): int(b) for a, b in zip(rows, cols)}
    else:
        sources = [int(a) for a in rows[removed]]
        banned = {int(a): int(b) for a, b in zip(rows[removed], cols[removed])}
    for a in sources:
        free = np.nonzero(out.sum(axis=0) == 0)[0]
        free = free[free != banned.get(a, -1)]
        if free.size:
            out[a, int(rng.choice(free))] = 1.0
    return out, int(rows.size), int(removed.sum())


def corrupt(inst: Instance, rho_e: float, seed: int = 0, independent: bool = False) -> Instance:
    """Remove each true correspondence with probability ``rho_e`` and rewire it.

    A removed source point is re-matched to a uniformly chosen target point
    of the other object that is currently unmatched, excluding its original
    partner. With ``independent=True`` false matches are instead added to each
    unmatched source point with probability ``rho_e``, independent of removals.
    """
    return _corrupt_with(inst, lambda i, j: rho_e, seed, independent,
                         {"rho_e": rho_e, "corrupt_seed": seed})


def corrupt_clustered(inst: Instance, cover: CoverComplex, rho_in: float, rho_out: float,
                      seed: int = 0, independent: bool = False) -> Instance:
    """Corrupt pairs sharing a cover node at ``rho_in`` and all other pairs at ``rho_out``."""
    return _corrupt_with(
        inst,
        lambda i, j: rho_in if cover.co_resident(i, j) else rho_out,
        seed,
        independent,
        {"rho_in": rho_in, "rho_out": rho_out, "corrupt_seed": seed},
    )


def _corrupt_with(inst: Instance, rate_of, seed, independent, extra) -> Instance:
    blocks = {}
    stats = {}
    for (i, j), blk in inst.gt_graph.blocks.items():
        rate = rate_of(i, j)
        if not 0 <= rate < 1:
            raise PreconditionError(f"corruption rate {rate} outside [0, 1)")
        blocks[(i, j)], total, removed = _corrupt_block(blk, rate, _pair_rng(seed, i, j), independent)
        stats[(i, j)] = (total, removed)
    observed = MapGraph(inst.gt_graph.point_counts, blocks)
    params = {**inst.params, **extra, "removal_stats": stats}
    return replace(inst, params=params, observed=observed)


def _three_way(n, K, overlap_fraction, seed):
    if K < 2:
        raise PreconditionError("need at least two cover nodes")
    n_common = math.ceil(overlap_fraction * n)
    if n_common < 1 or n - n_common < K:
        raise PreconditionError(f"n={n} is too small for {K} parts with overlap {overlap_fraction}")
    perm = np.random.default_rng(seed).permutation(n)
    common = sorted(int(x) for x in perm[:n_common])
    rest = perm[n_common:]
    sizes = [len(rest) // K + (1 if k >= K - len(rest) % K else 0) for k in range(K)]
    parts, pos = [], 0
    for s in sizes:
        parts.append(sorted(int(x) for x in rest[pos:pos + s]))
        pos += s
    return common, parts


def make_sparse_cover(n: int, K: int = 3, overlap_fraction: float = 0.2, seed: int = 0) -> CoverComplex:
    """Nodes ``common + part_k``: a shared random core plus an even split of the rest."""
    common, parts = _three_way(n, K, overlap_fraction, seed)
    return verify_cover([set(common) | set(p) for p in parts], objects=range(n))


def make_dense_cover(n: int, K: int = 3, overlap_fraction: float = 0.2, seed: int = 0) -> CoverComplex:
    """Nodes ``common + part_k + part_{k+1}`` (indices mod ``K``)."""
    common, parts = _three_way(n, K, overlap_fraction, seed)
    nodes = [set(common) | set(parts[k]) | set(parts[(k + 1) % K]) for k in range(K)]
    return verify_cover(nodes, objects=range(n))
