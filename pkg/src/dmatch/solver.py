"""Distributed ADMM over the nodes of a verified cover.

Every cover node owns a :class:`NodeState` and solves

    min  <W_i, X_i> + lam/2 (|A_i|^2 + |B_i|^2)
    s.t. X_i = A_i B_i^T,  X_i in C_i,
         overlap(X_i, j) = overlap(X_j, i) for each nerve neighbour j

with ``W_i = alpha - Xbar_i``. Iterations are lock-step: all nodes update
their primal variables, a barrier, every node publishes the overlap
sub-matrix of ``X_i`` to each neighbour, then all nodes take the dual steps.
"""

from __future__ import annotations

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from dmatch.core import BlockMatrix, MapGraph, compose_maps, round_matrix
from dmatch.cover import CoverComplex
from dmatch.errors import ConfigError, CoverRefusedError, ProtocolError

log = logging.getLogger(__name__)


@dataclass
class SolverConfig:
    alpha: float = 0.1
    lam: float = 50.0
    mu: float = 64.0
    beta: float = 1.0
    m: int = 40
    max_iters: int = 1000
    tol: float = 1e-4
    threshold: float = 0.5
    seed: int = 0
    warm_start: bool = True  # False: X_i starts at zero instead of projected input
    threads: int = 1

    def __post_init__(self):
        for name in ("lam", "mu", "beta"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        if self.m < 1:
            raise ConfigError("m must be positive")
        if self.max_iters < 1:
            raise ConfigError("max_iters must be positive")
        if not 0 < self.threshold < 1:
            raise ConfigError("threshold must lie in (0, 1)")


@dataclass(frozen=True)
class Message:
    """Overlap sub-matrix of ``X_sender`` addressed to ``receiver``.

    ``dual`` optionally carries the sender's ``Z_{sender,receiver}``; when it
    is absent the receiver uses ``-Z_{receiver,sender}``, which is equal under
    zero initialisation.
    """

    sender: int
    receiver: int
    payload: np.ndarray
    iteration: int
    dual: np.ndarray | None = None


@dataclass
class NodeState:
    node: int
    layout: tuple[tuple[int, int], ...]
    W: np.ndarray
    X: np.ndarray
    A: np.ndarray
    B: np.ndarray
    Y: np.ndarray
    Z: dict[int, np.ndarray] = field(default_factory=dict)
    overlaps: dict[int, np.ndarray] = field(default_factory=dict)
    _grids: dict = field(default_factory=dict, repr=False)
    _flat: dict = field(default_factory=dict, repr=False)
    _coef: np.ndarray | None = field(default=None, repr=False)

    @property
    def dim(self) -> int:
        return self.X.shape[0]

    def grid(self, j: int):
        """Open-mesh index of the overlap with neighbour ``j``."""
        if j not in self._grids:
            self._grids[j] = np.ix_(self.overlaps[j], self.overlaps[j])
        return self._grids[j]

    def flat(self, j: int) -> np.ndarray:
        """Row-major positions of the overlap block inside the flattened ``X``."""
        if j not in self._flat:
            idx = self.overlaps[j]
            self._flat[j] = (idx[:, None] * self.dim + idx[None, :]).ravel()
        return self._flat[j]

    def blocks(self, x: np.ndarray | None = None) -> BlockMatrix:
        return BlockMatrix(self.layout, self.X if x is None else x)


def node_seed(seed: int, node: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, node]))


def project_C(x0: np.ndarray, layout) -> np.ndarray:
    """Euclidean projection onto symmetric, [0, 1]-valued, identity-diagonal matrices.

    The constraints decouple over the symmetric entry pairs, so averaging each
    pair, clamping, and fixing the diagonal blocks is the exact projection.
    """
    x = x0 + x0.T
    x *= 0.5
    np.clip(x, 0.0, 1.0, out=x)
    idx, vals = _diagonal_blocks(tuple((int(o), int(m)) for o, m in layout))
    x.reshape(-1)[idx] = vals
    return x


@lru_cache(maxsize=256)
def _diagonal_blocks(layout) -> tuple[np.ndarray, np.ndarray]:
    """Flat positions of the diagonal blocks and their identity values."""
    d = sum(m for _, m in layout)
    idx, vals, pos = [], [], 0
    for _, m in layout:
        r = np.arange(pos, pos + m)
        idx.append((r[:, None] * d + r[None, :]).ravel())
        vals.append(np.eye(m).ravel())
        pos += m
    return np.concatenate(idx), np.concatenate(vals)


def init_node(node: int, xbar: BlockMatrix, cfg: SolverConfig,
              overlaps: dict[int, np.ndarray] | None = None) -> NodeState:
    """Fresh node state from the observed matching matrix restricted to the node."""
    biggest = max(m for _, m in xbar.layout)
    if cfg.m < biggest:
        raise ConfigError(f"universe size m={cfg.m} is below the largest object ({biggest} points)")
    rng = node_seed(cfg.seed, node)
    n = xbar.dim
    A = rng.random((n, cfg.m))
    B = rng.random((n, cfg.m))
    x = project_C(xbar.data, xbar.layout) if cfg.warm_start else np.zeros((n, n))
    overlaps = dict(overlaps or {})
    return NodeState(
        node=node,
        layout=xbar.layout,
        W=cfg.alpha - xbar.data,
        X=x,
        A=A,
        B=B,
        Y=np.zeros((n, n)),
        Z={j: np.zeros((len(idx), len(idx))) for j, idx in overlaps.items()},
        overlaps=overlaps,
    )


def _ridge_factor(target: np.ndarray, other: np.ndarray, reg: float) -> np.ndarray:
    gram = other.T @ other
    gram[np.diag_indices_from(gram)] += reg
    return cho_solve(cho_factor(gram), (target @ other).T).T


def update_A(state: NodeState, cfg: SolverConfig) -> np.ndarray:
    """``A = (X + Y/mu) B (B^T B + lam/mu I)^-1``."""
    return _ridge_factor(state.X + state.Y / cfg.mu, state.B, cfg.lam / cfg.mu)


def update_B(state: NodeState, cfg: SolverConfig) -> np.ndarray:
    """``B = (X + Y/mu)^T A (A^T A + lam/mu I)^-1``, using the current ``A``."""
    return _ridge_factor((state.X + state.Y / cfg.mu).T, state.A, cfg.lam / cfg.mu)


def x0_coefficients(state: NodeState, cfg: SolverConfig) -> np.ndarray:
    """Entrywise coefficient ``mu + 2 beta c(a, b)`` of the X-update operator."""
    coef = np.full((state.dim, state.dim), cfg.mu)
    for j in state.overlaps:
        coef[state.grid(j)] += 2.0 * cfg.beta
    return coef


def solve_X0(state: NodeState, incoming: dict[int, Message], cfg: SolverConfig,
             AB: np.ndarray | None = None) -> np.ndarray:
    """Unconstrained minimiser of the node's augmented Lagrangian in ``X``.

    The operator ``mu X + 2 beta sum_j P_j X P_j`` with diagonal 0/1 projectors
    ``P_j`` acts entrywise, so the solve is an entrywise division.
    """
    rhs = state.A @ state.B.T if AB is None else AB * 1.0
    rhs *= cfg.mu
    rhs -= state.W
    rhs -= state.Y
    for j, idx in state.overlaps.items():
        msg = incoming.get(j)
        if msg is None:
            raise ProtocolError(f"node {state.node}: no message from neighbour {j}")
        if msg.payload.shape != (len(idx), len(idx)):
            raise ProtocolError(
                f"node {state.node}: message from {j} has shape {msg.payload.shape}, "
                f"overlap needs {(len(idx), len(idx))}"
            )
        z_ij = state.Z[j]
        z_ji = -z_ij if msg.dual is None else msg.dual
        term = 2.0 * cfg.beta * msg.payload
        term -= z_ij
        term += z_ji
        # flat fancy indexing is much cheaper than an open-mesh scatter
        rhs.reshape(-1)[state.flat(j)] += term.ravel()
    if state._coef is None:
        state._coef = x0_coefficients(state, cfg)
    rhs /= state._coef
    return rhs


def extract_message(state: NodeState, neighbor: int, iteration: int = 0) -> Message:
    idx = state.overlaps.get(neighbor)
    if idx is None or len(idx) == 0:
        raise ProtocolError(f"node {state.node} shares no objects with node {neighbor}")
    k = len(idx)
    return Message(state.node, neighbor, state.X.reshape(-1)[state.flat(neighbor)].reshape(k, k), iteration)


def update_duals(state: NodeState, outgoing: dict[int, Message], incoming: dict[int, Message],
                 cfg: SolverConfig, AB: np.ndarray | None = None):
    """Dual ascent on the factorisation and consensus residuals."""
    if AB is None:
        AB = state.A @ state.B.T
    Y = state.Y + cfg.mu * (state.X - AB)
    Z = {
        j: z + cfg.beta * (outgoing[j].payload - incoming[j].payload)
        for j, z in state.Z.items()
    }
    return Y, Z


@dataclass
class IterationRecord:
    iteration: int
    factor_residuals: list[float]
    consensus_residuals: dict[tuple[int, int], float]
    node_seconds: list[float]

    @property
    def max_factor_residual(self) -> float:
        return max(self.factor_residuals)

    @property
    def max_consensus_residual(self) -> float:
        return max(self.consensus_residuals.values(), default=0.0)

    def node_consensus_residual(self, node: int) -> float:
        vals = [r for (a, b), r in self.consensus_residuals.items() if node in (a, b)]
        return max(vals, default=0.0)


@dataclass
class SolveReport:
    converged: bool
    iterations: int
    trace: list[IterationRecord]
    wall_seconds: float

    @property
    def final(self) -> IterationRecord | None:
        return self.trace[-1] if self.trace else None

    @property
    def critical_path_seconds(self) -> float:
        """Per-iteration compute time of the slowest node.

        Each node's time is its median over iterations, which keeps scheduler
        jitter out of the estimate; the slowest node bounds a synchronous round.
        """
        if not self.trace:
            return 0.0
        per_node = np.median([r.node_seconds for r in self.trace], axis=0)
        return float(per_node.max())


@dataclass
class Solution:
    cover: CoverComplex
    states: list[NodeState]
    report: SolveReport
    threshold: float = 0.5

    @property
    def relaxed(self) -> list[BlockMatrix]:
        return [s.blocks() for s in self.states]

    @property
    def rounded(self) -> list[BlockMatrix]:
        return [round_matrix(s.blocks(), self.threshold) for s in self.states]

    def consensus_gap(self) -> float:
        """Largest entrywise disagreement between neighbours' overlap sub-matrices."""
        gap = 0.0
        for a, b in self.cover.nerve_edges:
            sa, sb = self.states[a], self.states[b]
            xa = sa.X[sa.grid(b)]
            xb = sb.X[sb.grid(a)]
            gap = max(gap, float(np.abs(xa - xb).max()))
        return gap

    def pair_blocks(self) -> dict[tuple[int, int], np.ndarray]:
        """Union of rounded upper-triangle blocks over all nodes covering each pair."""
        out: dict[tuple[int, int], np.ndarray] = {}
        for bm in self.rounded:
            ids = bm.ids
            for k, i in enumerate(ids):
                for j in ids[k + 1:]:
                    blk = bm.block(i, j)
                    out[(i, j)] = np.maximum(out[(i, j)], blk) if (i, j) in out else blk.copy()
        return dict(sorted(out.items()))

    def to_map_graph(self, point_counts: dict[int, int]) -> MapGraph:
        return MapGraph(point_counts, self.pair_blocks())


def _overlap_indices(layouts: list[BlockMatrix], cover: CoverComplex):
    out: list[dict[int, np.ndarray]] = [dict() for _ in cover.nodes]
    for a, b in cover.nerve_edges:
        shared = cover.nodes[a] & cover.nodes[b]
        out[a][b] = layouts[a].indices(shared)
        out[b][a] = layouts[b].indices(shared)
    return out


def _compute_phase(state: NodeState, incoming: dict[int, Message], cfg: SolverConfig):
    t0 = time.perf_counter()
    state.A = update_A(state, cfg)
    state.B = update_B(state, cfg)
    AB = state.A @ state.B.T
    state.X = project_C(solve_X0(state, incoming, cfg, AB), state.layout)
    norm = np.linalg.norm(state.X)
    resid = float(np.linalg.norm(state.X - AB) / norm) if norm > 0 else 0.0
    return AB, resid, time.perf_counter() - t0


def _exchange(states: list[NodeState], cover: CoverComplex, iteration: int):
    inbox: list[dict[int, Message]] = [dict() for _ in states]
    outbox: list[dict[int, Message]] = [dict() for _ in states]
    for a, b in cover.nerve_edges:
        for src, dst in ((a, b), (b, a)):
            msg = extract_message(states[src], dst, iteration)
            outbox[src][dst] = msg
            inbox[dst][src] = msg
    return outbox, inbox


def run_admm(g: MapGraph, cover: CoverComplex, cfg: SolverConfig, force: bool = False) -> Solution:
    """Solve every cover node jointly with consensus on the overlaps.

    Raises
    ------
    CoverRefusedError
        If the cover verdict fails and ``force`` is not set.
    """
    if not cover.verdict.passed and not force:
        raise CoverRefusedError(
            f"cover rejected (connected={cover.verdict.connected}, "
            f"h1_rank={cover.verdict.h1_rank}, covers_all={cover.verdict.covers_all})"
        )
    t_start = time.perf_counter()
    xbars = [g.to_block_matrix(v) for v in cover.nodes]
    overlaps = _overlap_indices(xbars, cover)
    states = [init_node(k, xb, cfg, overlaps[k]) for k, xb in enumerate(xbars)]
    _, inbox = _exchange(states, cover, 0)

    pool = ThreadPoolExecutor(cfg.threads) if cfg.threads > 1 and len(states) > 1 else None
    trace: list[IterationRecord] = []
    converged = False
    try:
        for it in range(1, cfg.max_iters + 1):
            jobs = [(s, inbox[k], cfg) for k, s in enumerate(states)]
            if pool is None:
                results = [_compute_phase(*job) for job in jobs]
            else:
                results = list(pool.map(lambda job: _compute_phase(*job), jobs))
            # barrier: every node has finished its primal update
            outbox, inbox = _exchange(states, cover, it)
            cons = {}
            for a, b in cover.nerve_edges:
                diff = outbox[a][b].payload - outbox[b][a].payload
                cons[(a, b)] = float(np.linalg.norm(diff) / diff.shape[0])
            for k, s in enumerate(states):
                s.Y, s.Z = update_duals(s, outbox[k], inbox[k], cfg, AB=results[k][0])
            rec = IterationRecord(it, [r[1] for r in results], cons, [r[2] for r in results])
            trace.append(rec)
            if rec.max_factor_residual < cfg.tol and rec.max_consensus_residual < cfg.tol:
                converged = True
                break
    finally:
        if pool is not None:
            pool.shutdown()
    report = SolveReport(converged, len(trace), trace, time.perf_counter() - t_start)
    if not converged:
        log.info("ADMM stopped at max_iters=%d without converging", cfg.max_iters)
    return Solution(cover, states, report, cfg.threshold)


def compose_one_hop(pairs: dict[tuple[int, int], np.ndarray], cover: CoverComplex,
                    source: int, target: int, point_counts: dict[int, int]):
    """Cross-node map from ``source`` to ``target`` voted through intermediates.

    ``pairs`` holds rounded upper-triangle blocks as from
    :meth:`Solution.pair_blocks`. Returns ``(map, has_support)``; the map is
    the direct block when the two objects share a cover node.
    """
    def blk(i, j):
        return pairs[(i, j)] if i < j else pairs[(j, i)].T

    if cover.co_resident(source, target):
        return blk(source, target).copy(), True
    votes = np.zeros((point_counts[source], point_counts[target]))
    found = False
    for k in sorted(point_counts):
        if k in (source, target):
            continue
        if cover.co_resident(source, k) and cover.co_resident(k, target):
            votes += compose_maps(blk(source, k), blk(k, target))
            found = True
    out = np.zeros_like(votes)
    for a in range(votes.shape[0]):
        if votes[a].max() >= 1:
            out[a, int(np.argmax(votes[a]))] = 1.0
    return out, found


def stitch(solution: Solution, point_counts: dict[int, int]) -> MapGraph:
    """Global map graph: node-internal blocks plus one-hop composites for the rest."""
    pairs = solution.pair_blocks()
    blocks = dict(pairs)
    ids = sorted(point_counts)
    for k, a in enumerate(ids):
        for b in ids[k + 1:]:
            if (a, b) in blocks:
                continue
            comp, found = compose_one_hop(pairs, solution.cover, a, b, point_counts)
            if found:
                blocks[(a, b)] = comp
    return MapGraph(point_counts, blocks)
