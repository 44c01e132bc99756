"""Block matching matrices, map graphs and small-instance consistency checks.

A map graph stores, for every observed pair of objects ``(i, j)`` with
``i < j``, a matrix of shape ``m_i x m_j`` with entries in ``[0, 1]``. Entry
``(a, b)`` is the confidence that point ``a`` of object ``i`` corresponds to
point ``b`` of object ``j``. The reverse block is the transpose.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from dmatch.errors import PreconditionError, StructuralError

Pair = tuple[int, int]


def _canon(i: int, j: int) -> Pair:
    return (i, j) if i < j else (j, i)


@dataclass(frozen=True)
class MapGraph:
    """Objects with point counts plus observed pairwise map blocks.

    Parameters
    ----------
    point_counts : mapping of object id to number of points ``m_i``.
    blocks : mapping of ordered pair to block. Pairs may be given in either
        orientation; they are stored as ``(min, max)`` with the block
        transposed when needed.
    """

    point_counts: Mapping[int, int]
    blocks: Mapping[Pair, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        counts = {int(k): int(v) for k, v in sorted(self.point_counts.items())}
        for oid, m in counts.items():
            if m <= 0:
                raise StructuralError(f"object {oid} has non-positive point count {m}")
        stored: dict[Pair, np.ndarray] = {}
        for (i, j), blk in self.blocks.items():
            i, j = int(i), int(j)
            if i == j:
                raise StructuralError(f"self-loop on object {i}")
            if i not in counts or j not in counts:
                raise StructuralError(f"block ({i}, {j}) references unknown object")
            blk = np.asarray(blk, dtype=float)
            if (i, j) != _canon(i, j):
                i, j, blk = j, i, blk.T
            if blk.shape != (counts[i], counts[j]):
                raise StructuralError(
                    f"block ({i}, {j}) has shape {blk.shape}, "
                    f"expected {(counts[i], counts[j])}"
                )
            if blk.size and (blk.min() < 0.0 or blk.max() > 1.0):
                raise StructuralError(f"block ({i}, {j}) has entries outside [0, 1]")
            if (i, j) in stored:
                raise StructuralError(f"block ({i}, {j}) given twice")
            blk = blk.copy()
            blk.flags.writeable = False
            stored[(i, j)] = blk
        object.__setattr__(self, "point_counts", counts)
        object.__setattr__(self, "blocks", dict(sorted(stored.items())))

    @property
    def objects(self) -> list[int]:
        return list(self.point_counts)

    @property
    def edges(self) -> list[Pair]:
        return list(self.blocks)

    @property
    def n_objects(self) -> int:
        return len(self.point_counts)

    def has_edge(self, i: int, j: int) -> bool:
        return _canon(i, j) in self.blocks

    def block(self, i: int, j: int) -> np.ndarray:
        """Block ``(i, j)``; identity on the diagonal, transpose for ``i > j``."""
        if i == j:
            return np.eye(self.point_counts[i])
        blk = self.blocks.get(_canon(i, j))
        if blk is None:
            raise KeyError((i, j))
        return blk if i < j else blk.T

    def neighbors(self, i: int) -> set[int]:
        out = set()
        for a, b in self.blocks:
            if a == i:
                out.add(b)
            elif b == i:
                out.add(a)
        return out

    def layout(self, ids: Iterable[int] | None = None) -> tuple[tuple[int, int], ...]:
        ids = self.objects if ids is None else sorted(ids)
        return tuple((i, self.point_counts[i]) for i in ids)

    def subgraph(self, ids: Iterable[int]) -> "MapGraph":
        keep = set(ids)
        return MapGraph(
            {i: m for i, m in self.point_counts.items() if i in keep},
            {p: b for p, b in self.blocks.items() if p[0] in keep and p[1] in keep},
        )

    def to_block_matrix(self, ids: Iterable[int] | None = None) -> "BlockMatrix":
        """Dense matching matrix over ``ids``: identity diagonal, 0 for unobserved pairs."""
        bm = BlockMatrix.zeros(self.layout(ids))
        for oid, _ in bm.layout:
            bm.set_block(oid, oid, np.eye(self.point_counts[oid]))
        members = set(bm.ids)
        for (i, j), blk in self.blocks.items():
            if i in members and j in members:
                bm.set_block(i, j, blk)
                bm.set_block(j, i, blk.T)
        return bm


class BlockMatrix:
    """Square dense matrix partitioned into object blocks.

    ``layout`` is an ordered sequence of ``(object id, point count)``.
    """

    def __init__(self, layout: Sequence[tuple[int, int]], data: np.ndarray):
        self.layout = tuple((int(i), int(m)) for i, m in layout)
        data = np.asarray(data, dtype=float)
        self.offsets: dict[int, int] = {}
        pos = 0
        for oid, m in self.layout:
            if oid in self.offsets:
                raise StructuralError(f"object {oid} appears twice in layout")
            self.offsets[oid] = pos
            pos += m
        if data.shape != (pos, pos):
            raise StructuralError(f"data has shape {data.shape}, layout needs {(pos, pos)}")
        self.data = data
        self._sizes = dict(self.layout)

    @classmethod
    def zeros(cls, layout: Sequence[tuple[int, int]]) -> "BlockMatrix":
        n = sum(m for _, m in layout)
        return cls(layout, np.zeros((n, n)))

    @property
    def ids(self) -> list[int]:
        return [i for i, _ in self.layout]

    @property
    def dim(self) -> int:
        return self.data.shape[0]

    def span(self, oid: int) -> slice:
        start = self.offsets[oid]
        return slice(start, start + self._sizes[oid])

    def block(self, i: int, j: int) -> np.ndarray:
        return self.data[self.span(i), self.span(j)]

    def set_block(self, i: int, j: int, value) -> None:
        self.data[self.span(i), self.span(j)] = value

    def indices(self, ids: Iterable[int]) -> np.ndarray:
        """Row indices of the given objects, in ascending object id order."""
        parts = [np.arange(self.span(i).start, self.span(i).stop) for i in sorted(ids)]
        return np.concatenate(parts) if parts else np.zeros(0, dtype=int)

    def copy(self) -> "BlockMatrix":
        return BlockMatrix(self.layout, self.data.copy())

    def to_map_graph(self, pairs: Iterable[Pair] | None = None) -> MapGraph:
        """Off-diagonal blocks (upper triangle) as a map graph over all layout pairs."""
        ids = self.ids
        if pairs is None:
            pairs = [(a, b) for k, a in enumerate(ids) for b in ids[k + 1:]]
        return MapGraph(dict(self.layout), {_canon(i, j): self.block(*_canon(i, j)) for i, j in pairs})

    def __eq__(self, other):
        if not isinstance(other, BlockMatrix):
            return NotImplemented
        return self.layout == other.layout and np.array_equal(self.data, other.data)

    def __repr__(self):
        return f"BlockMatrix(objects={len(self.layout)}, dim={self.dim})"


@dataclass(frozen=True)
class UniverseAssignment:
    """Latent assignment of every observed point to one of ``universe_size`` entities."""

    universe_size: int
    assignments: Mapping[int, np.ndarray]

    def __post_init__(self):
        if self.universe_size <= 0:
            raise StructuralError("universe size must be positive")
        clean = {}
        for oid, a in sorted(self.assignments.items()):
            a = np.asarray(a)
            if a.ndim != 2 or a.shape[1] != self.universe_size:
                raise StructuralError(f"assignment of object {oid} has shape {a.shape}")
            if not np.isin(a, (0, 1)).all():
                raise StructuralError(f"assignment of object {oid} is not 0/1")
            if not (a.sum(axis=1) == 1).all():
                raise StructuralError(f"object {oid}: every point needs exactly one entity")
            if (a.sum(axis=0) > 1).any():
                raise StructuralError(f"object {oid}: two points share an entity")
            a = a.astype(float)
            a.flags.writeable = False
            clean[int(oid)] = a
        object.__setattr__(self, "assignments", clean)

    @property
    def point_counts(self) -> dict[int, int]:
        return {i: a.shape[0] for i, a in self.assignments.items()}

    def layout(self) -> tuple[tuple[int, int], ...]:
        return tuple(self.point_counts.items())


def ground_truth_matrix(assign: UniverseAssignment, layout=None) -> BlockMatrix:
    """Consistent matching matrix ``A A^T`` stacked over ``layout``."""
    if layout is None:
        layout = assign.layout()
    layout = tuple((int(i), int(m)) for i, m in layout)
    counts = assign.point_counts
    if {i for i, _ in layout} != set(counts) or any(counts[i] != m for i, m in layout):
        raise StructuralError("layout does not match the assignment's objects")
    stacked = np.vstack([assign.assignments[i] for i, _ in layout])
    return BlockMatrix(layout, stacked @ stacked.T)


def compose_maps(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Boolean composition of partial maps ``p: i -> j`` and ``q: j -> k``."""
    p = np.asarray(p)
    q = np.asarray(q)
    if p.ndim != 2 or q.ndim != 2 or p.shape[1] != q.shape[0]:
        raise StructuralError(f"cannot compose maps of shapes {p.shape} and {q.shape}")
    return ((p != 0).astype(np.int64) @ (q != 0).astype(np.int64) > 0).astype(float)


class _PointUnion:
    def __init__(self):
        self.parent: dict = {}

    def find(self, x):
        self.parent.setdefault(x, x)
        root = x
        while self.parent[root] != root:
            root = self.parent[root]
        while self.parent[x] != root:
            self.parent[x], x = root, self.parent[x]
        return root

    def union(self, a, b):
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            self.parent[max(ra, rb)] = min(ra, rb)


def is_cycle_consistent(g: MapGraph) -> bool:
    """Whether every cycle of 0/1 maps in ``g`` composes to the identity.

    Points are anchored by propagating correspondences: every 1-entry joins
    two points into one class, and the graph is consistent iff no class holds
    two distinct points of the same object. For partial maps this is the same
    as requiring that each point surviving a cycle returns to itself. Blocks
    that are not partial maps (a row or column with two 1s) are inconsistent.

    Raises
    ------
    PreconditionError
        If a block holds a value other than 0 or 1.
    """
    uf = _PointUnion()
    for (i, j), blk in g.blocks.items():
        if not np.isin(blk, (0.0, 1.0)).all():
            raise PreconditionError(f"block ({i}, {j}) is not 0/1; round it first")
        for a, b in zip(*np.nonzero(blk)):
            uf.union((i, int(a)), (j, int(b)))
    seen: dict[tuple, tuple[int, int]] = {}
    for oid, m in g.point_counts.items():
        for a in range(m):
            key = (uf.find((oid, a)), oid)
            if key in seen:
                return False
            seen[key] = (oid, a)
    return True


def round_matrix(x: BlockMatrix, threshold: float = 0.5) -> BlockMatrix:
    """Entries ``>= threshold`` become 1, the rest 0; diagonal blocks reset to identity."""
    out = BlockMatrix(x.layout, (x.data >= threshold).astype(float))
    for oid, m in out.layout:
        out.set_block(oid, oid, np.eye(m))
    return out


def partial_map_violations(x: BlockMatrix) -> list[tuple[int, int, str, int]]:
    """Rows/columns of rounded off-diagonal blocks holding more than one match.

    Returns ``(i, j, "row" | "col", index)`` records; empty when every block
    is a valid partial map.
    """
    out = []
    ids = x.ids
    for i in ids:
        for j in ids:
            if i == j:
                continue
            blk = x.block(i, j)
            out += [(i, j, "row", int(r)) for r in np.nonzero(blk.sum(axis=1) > 1)[0]]
            out += [(i, j, "col", int(c)) for c in np.nonzero(blk.sum(axis=0) > 1)[0]]
    return out
