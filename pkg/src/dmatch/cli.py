"""Command line interface: ``dmatch <command> ...``.

Exit codes: 0 on success, 2 when a cover fails verification, 1 on any other error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from dmatch import io
from dmatch.baseline import match_global, sparsify
from dmatch.cover import CoverConfig, greedy_cover
from dmatch.errors import CoverRefusedError, DMatchError
from dmatch.harness import ExperimentGrid, emit_results, iou_error, run_cover_study, run_grid
from dmatch.solver import SolverConfig, run_admm
from dmatch.synth import corrupt, generate, make_dense_cover, make_sparse_cover

log = logging.getLogger("dmatch")

EXIT_REFUSED = 2


def _floats(text: str) -> list[float]:
    return [float(x) for x in text.split(",") if x]


def _axis(text: str):
    name, _, values = text.partition("=")
    if not values:
        raise argparse.ArgumentTypeError(f"axis must look like name=v1,v2,...; got {text!r}")
    vals = _floats(values)
    if name in ("n", "r"):
        vals = [int(v) for v in vals]
    return name, vals


def _solver_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--alpha", type=float, default=0.1)
    p.add_argument("--lambda", dest="lam", type=float, default=50.0)
    p.add_argument("--mu", type=float, default=64.0)
    p.add_argument("--beta", type=float, default=1.0)
    p.add_argument("--m", type=int, default=None, help="universe size estimate (default: 2 x largest object)")
    p.add_argument("--tol", type=float, default=1e-4)
    p.add_argument("--max-iters", type=int, default=1000)
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--zero-init", action="store_true", help="start X_i at zero instead of the input")


def _solver_config(args, g) -> SolverConfig:
    m = args.m if args.m is not None else 2 * max(g.point_counts.values())
    return SolverConfig(
        alpha=args.alpha, lam=args.lam, mu=args.mu, beta=args.beta, m=m,
        max_iters=args.max_iters, tol=args.tol, threshold=args.threshold,
        seed=args.seed, warm_start=not args.zero_init, threads=args.threads,
    )


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--threads", type=int, default=1)
    common.add_argument("--out-dir", type=Path, default=Path("."))
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="dmatch", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", parents=[common], help="generate a synthetic instance")
    p.add_argument("--n", type=int, default=50)
    p.add_argument("--r", type=int, default=20)
    p.add_argument("--rho0", type=float, default=0.6)
    p.add_argument("--rhoe", type=float, default=0.2)
    p.add_argument("--overlap", type=float, default=0.2)
    p.add_argument("--independent", action="store_true", help="add false matches independently of removals")
    p.add_argument("--out", type=Path, default=None, help="output directory (default: --out-dir)")

    p = sub.add_parser("cover", parents=[common], help="build or check a cover and print its verdict")
    p.add_argument("--input", type=Path, required=True)
    p.add_argument("--cover", type=Path, default=None, help="verify this cover instead of building one")
    p.add_argument("--K", type=int, default=3)
    p.add_argument("--epsilon", type=float, default=None)
    p.add_argument("--max-rounds", type=int, default=10)
    p.add_argument("--dims", type=int, default=1)
    p.add_argument("--out", type=Path, default=None)
    p.add_argument("--nerve", type=Path, default=None, help="write nerve edges/triangles here")

    p = sub.add_parser("solve", parents=[common], help="distributed solve on a cover")
    p.add_argument("--input", type=Path, required=True)
    p.add_argument("--cover", type=Path, required=True)
    p.add_argument("--out", type=Path, default=None)
    p.add_argument("--trace", type=Path, default=None)
    p.add_argument("--force", action="store_true", help="solve even if the cover is rejected")
    _solver_args(p)

    p = sub.add_parser("solve-global", parents=[common], help="single-node global solve")
    p.add_argument("--input", type=Path, required=True)
    p.add_argument("--cover", type=Path, default=None)
    p.add_argument("--sparse", action="store_true", help="drop pairs not sharing a cover node")
    p.add_argument("--out", type=Path, default=None)
    p.add_argument("--trace", type=Path, default=None)
    _solver_args(p)

    p = sub.add_parser("score", parents=[common], help="IOU error of a solution against ground truth")
    p.add_argument("--solution", type=Path, required=True)
    p.add_argument("--gt", type=Path, required=True)

    p = sub.add_parser("grid", parents=[common], help="error grid over two parameters")
    p.add_argument("--axis1", type=_axis, default=("n", [20, 35, 50]))
    p.add_argument("--axis2", type=_axis, default=("rhoe", [0.0, 0.1, 0.2, 0.3, 0.4, 0.5]))
    p.add_argument("--methods", default="dmatch-dense,global")
    p.add_argument("--n", type=int, default=50)
    p.add_argument("--r", type=int, default=20)
    p.add_argument("--rho0", type=float, default=0.6)
    p.add_argument("--rhoe", type=float, default=0.2)
    p.add_argument("--reps", type=int, default=5)
    p.add_argument("--max-iters", type=int, default=1000)

    p = sub.add_parser("cover-study", parents=[common], help="ground-truth versus random cover grid")
    p.add_argument("--n", type=int, default=50)
    p.add_argument("--r", type=int, default=20)
    p.add_argument("--rho0", type=float, default=0.6)
    p.add_argument("--rho-in", type=_floats, default=[0.1, 0.2, 0.3, 0.4, 0.5])
    p.add_argument("--rho-out", type=_floats, default=[0.1, 0.2, 0.3, 0.4, 0.5])
    p.add_argument("--mode", choices=["ground-truth", "random"], default="ground-truth")
    p.add_argument("--kind", choices=["sparse", "dense"], default="sparse")
    p.add_argument("--reps", type=int, default=5)
    return parser


def cmd_gen(args) -> int:
    out = args.out or args.out_dir
    out.mkdir(parents=True, exist_ok=True)
    inst = corrupt(generate(args.n, args.r, args.rho0, args.seed), args.rhoe, args.seed,
                   independent=args.independent)
    io.write_map_graph(inst.observed, out / "graph.txt")
    io.write_map_graph(inst.gt_graph, out / "gt.txt")
    io.write_cover(make_sparse_cover(args.n, 3, args.overlap, args.seed), out / "cover_sparse.txt")
    io.write_cover(make_dense_cover(args.n, 3, args.overlap, args.seed), out / "cover_dense.txt")
    print(f"wrote instance with {args.n} objects to {out}")
    return 0


def cmd_cover(args) -> int:
    g = io.read_map_graph(args.input)
    if args.cover is not None:
        cx = io.read_cover(args.cover, g)
    else:
        cfg = CoverConfig(K=args.K, epsilon=args.epsilon, max_rounds=args.max_rounds,
                          seed=args.seed, dims=args.dims)
        cx = greedy_cover(g, cfg)
    v = cx.verdict
    print(f"nodes={cx.K} sizes={[len(x) for x in cx.nodes]} edges={len(cx.nerve_edges)} "
          f"triangles={len(cx.nerve_triangles)}")
    print(f"covers_all={v.covers_all} connected={v.connected} h1_rank={v.h1_rank} "
          f"joint_normal={v.joint_normal} rounds={v.rounds} passed={v.passed}")
    if args.out is not None:
        io.write_cover(cx, args.out)
    if args.nerve is not None:
        Path(args.nerve).write_text(io.format_nerve(cx))
    return 0 if v.passed else EXIT_REFUSED


def cmd_solve(args) -> int:
    g = io.read_map_graph(args.input)
    cover = io.read_cover(args.cover, g)
    sol = run_admm(g, cover, _solver_config(args, g), force=args.force)
    rep = sol.report
    print(f"converged={rep.converged} iterations={rep.iterations} wall={rep.wall_seconds:.2f}s")
    out = args.out or args.out_dir / "solution.txt"
    out.write_text(io.format_solution(sol))
    if args.trace is not None:
        io.write_trace(rep, args.trace)
    return 0


def cmd_solve_global(args) -> int:
    g = io.read_map_graph(args.input)
    if args.sparse:
        if args.cover is None:
            raise DMatchError("--sparse needs --cover")
        g = sparsify(g, io.read_cover(args.cover, g))
    rounded, rep = match_global(g, _solver_config(args, g))
    print(f"converged={rep.converged} iterations={rep.iterations} wall={rep.wall_seconds:.2f}s")
    out = args.out or args.out_dir / "solution.txt"
    out.write_text("nodes 1\nnode 0\n" + io.format_map_graph(rounded.to_map_graph()))
    if args.trace is not None:
        io.write_trace(rep, args.trace)
    return 0


def cmd_score(args) -> int:
    est = io.merge_graphs(io.read_solution(args.solution))
    print(f"{iou_error(est, io.read_map_graph(args.gt)):.6f}")
    return 0


def cmd_grid(args) -> int:
    fixed = {"n": args.n, "r": args.r, "rho0": args.rho0, "rhoe": args.rhoe}
    cells = []
    table = None
    for method in args.methods.split(","):
        grid = ExperimentGrid(args.axis1, args.axis2, method, fixed, args.reps,
                              solver={"max_iters": args.max_iters})
        table = run_grid(grid, workers=args.threads)
        cells += table.cells
    table.cells = cells
    for path in emit_results(table, args.out_dir):
        print(f"wrote {path}")
    return 0


def cmd_cover_study(args) -> int:
    table = run_cover_study(args.n, args.rho_in, args.rho_out, args.mode, args.kind, args.r,
                            args.rho0, list(range(args.seed, args.seed + args.reps)),
                            workers=args.threads)
    for path in emit_results(table, args.out_dir):
        print(f"wrote {path}")
    return 0


COMMANDS = {
    "gen": cmd_gen,
    "cover": cmd_cover,
    "solve": cmd_solve,
    "solve-global": cmd_solve_global,
    "score": cmd_score,
    "grid": cmd_grid,
    "cover-study": cmd_cover_study,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except CoverRefusedError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_REFUSED
    except (DMatchError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
