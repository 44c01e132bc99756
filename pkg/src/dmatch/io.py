"""Line-oriented text formats for map graphs, covers and residual traces.

Map graph::

    objects <n>
    <id> <m_i>            (n lines)
    edges <e>
    <i> <j> <nnz>         (per edge, followed by nnz lines)
    <row> <col> <value>

Cover::

    cover <K>
    <k> <|V_k|> <id> <id> ...
"""

from __future__ import annotations

import csv
import io as _io
from pathlib import Path
from typing import Iterable, TextIO

import numpy as np

from dmatch.core import MapGraph
from dmatch.cover import CoverComplex, verify_cover
from dmatch.errors import StructuralError


def _tokens(fh: TextIO):
    for lineno, line in enumerate(fh, 1):
        line = line.split("#", 1)[0].strip()
        if line:
            yield lineno, line.split()


def _expect(it, keyword):
    try:
        lineno, tok = next(it)
    except StopIteration:
        raise StructuralError(f"unexpected end of file, wanted '{keyword}'") from None
    if tok[0] != keyword or len(tok) != 2:
        raise StructuralError(f"line {lineno}: expected '{keyword} <count>'")
    return int(tok[1])


def _row(it, width, what):
    try:
        lineno, tok = next(it)
    except StopIteration:
        raise StructuralError(f"unexpected end of file while reading {what}") from None
    if len(tok) != width:
        raise StructuralError(f"line {lineno}: malformed {what}: {' '.join(tok)}")
    return lineno, tok


def read_map_graph(path) -> MapGraph:
    with open(path) as fh:
        return parse_map_graph(fh)


def parse_map_graph(fh: TextIO) -> MapGraph:
    it = _tokens(fh)
    counts = {}
    for _ in range(_expect(it, "objects")):
        _, (oid, m) = _row(it, 2, "object line")
        counts[int(oid)] = int(m)
    blocks = {}
    for _ in range(_expect(it, "edges")):
        lineno, (i, j, nnz) = _row(it, 3, "edge header")
        i, j = int(i), int(j)
        if i not in counts or j not in counts:
            raise StructuralError(f"line {lineno}: edge ({i}, {j}) references unknown object")
        blk = np.zeros((counts[i], counts[j]))
        for _ in range(int(nnz)):
            lineno, (r, c, v) = _row(it, 3, "triplet")
            r, c = int(r), int(c)
            if not (0 <= r < counts[i] and 0 <= c < counts[j]):
                raise StructuralError(f"line {lineno}: index ({r}, {c}) out of range")
            blk[r, c] = float(v)
        blocks[(i, j)] = blk
    return MapGraph(counts, blocks)


def format_map_graph(g: MapGraph) -> str:
    lines = [f"objects {g.n_objects}"]
    lines += [f"{oid} {m}" for oid, m in g.point_counts.items()]
    lines.append(f"edges {len(g.blocks)}")
    for (i, j), blk in g.blocks.items():
        rows, cols = np.nonzero(blk)
        lines.append(f"{i} {j} {rows.size}")
        lines += [f"{r} {c} {blk[r, c]:.6f}" for r, c in zip(rows, cols)]
    return "\n".join(lines) + "\n"


def write_map_graph(g: MapGraph, path) -> None:
    Path(path).write_text(format_map_graph(g))


def format_cover(cover: CoverComplex) -> str:
    lines = [f"cover {cover.K}"]
    for k, v in enumerate(cover.nodes):
        lines.append(" ".join(str(x) for x in [k, len(v), *sorted(v)]))
    return "\n".join(lines) + "\n"


def write_cover(cover: CoverComplex, path) -> None:
    Path(path).write_text(format_cover(cover))


def parse_cover(fh: TextIO, g: MapGraph | None = None) -> CoverComplex:
    it = _tokens(fh)
    nodes = []
    for k in range(_expect(it, "cover")):
        try:
            lineno, tok = next(it)
        except StopIteration:
            raise StructuralError("unexpected end of file while reading cover nodes") from None
        if len(tok) < 2 or int(tok[0]) != k or len(tok) != 2 + int(tok[1]):
            raise StructuralError(f"line {lineno}: malformed cover node line")
        nodes.append({int(x) for x in tok[2:]})
    return verify_cover(nodes, g)


def read_cover(path, g: MapGraph | None = None) -> CoverComplex:
    with open(path) as fh:
        return parse_cover(fh, g)


def format_nerve(cover: CoverComplex) -> str:
    lines = [f"vertices {cover.K}", f"edges {len(cover.nerve_edges)}"]
    lines += [f"{a} {b}" for a, b in cover.nerve_edges]
    lines.append(f"triangles {len(cover.nerve_triangles)}")
    lines += [" ".join(map(str, t)) for t in cover.nerve_triangles]
    return "\n".join(lines) + "\n"


def format_solution(solution) -> str:
    """Rounded ``X_i`` of every node, each as a map-graph section."""
    out = [f"nodes {len(solution.states)}"]
    for k, bm in enumerate(solution.rounded):
        out.append(f"node {k}")
        out.append(format_map_graph(bm.to_map_graph()).rstrip("\n"))
    return "\n".join(out) + "\n"


def parse_solution(fh: TextIO) -> list[MapGraph]:
    text = fh.read().splitlines()
    if not text or not text[0].startswith("nodes "):
        raise StructuralError("solution file must start with 'nodes <K>'")
    k = int(text[0].split()[1])
    sections, current = [], None
    for line in text[1:]:
        if line.startswith("node "):
            current = []
            sections.append(current)
        elif current is not None:
            current.append(line)
    if len(sections) != k:
        raise StructuralError(f"solution header says {k} nodes, found {len(sections)}")
    return [parse_map_graph(_io.StringIO("\n".join(s))) for s in sections]


def read_solution(path) -> list[MapGraph]:
    with open(path) as fh:
        return parse_solution(fh)


def write_trace(report, path) -> None:
    """Residual trace as ``iter,node,factor_residual,max_consensus_residual``."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["iter", "node", "factor_residual", "max_consensus_residual"])
        for rec in report.trace:
            for node, fr in enumerate(rec.factor_residuals):
                w.writerow([rec.iteration, node, repr(fr), repr(rec.node_consensus_residual(node))])


def merge_graphs(graphs: Iterable[MapGraph]) -> MapGraph:
    """Union of several 0/1 map graphs; a pair covered twice keeps the entrywise max."""
    counts, blocks = {}, {}
    for g in graphs:
        counts.update(g.point_counts)
        for p, b in g.blocks.items():
            blocks[p] = np.maximum(blocks[p], b) if p in blocks else b
    return MapGraph(counts, blocks)
