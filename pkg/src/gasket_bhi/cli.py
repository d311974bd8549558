"""Command-line entry point ``gasket``.

Exit codes: 0 when every assertion of the command passed, 1 when some
assertion failed, 2 for usage or configuration errors.
"""
from __future__ import annotations

import argparse
import sys
from fractions import Fraction
from pathlib import Path

import numpy as np

from . import __version__
from .config import WINDOWS, ConfigError, describe, parse_config

OK, FAILED, USAGE = 0, 1, 2


class UsageError(Exception):
    pass


# ------------------------------------------------------------ argument helpers

def _point(s: str):
    from .geometry import ExactPoint
    try:
        a, b = s.split(",")
        return ExactPoint(Fraction(a), Fraction(b))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a,b with rationals a and b, got {s!r}") from None


def _cellspec(s: str):
    from .geometry import Cell, ExactPoint
    try:
        a, b, n = s.split(",")
        return Cell(ExactPoint(Fraction(a), Fraction(b)), int(n))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a,b,order, got {s!r}") from None


def _add_graph_args(p):
    p.add_argument("--window", choices=sorted(WINDOWS), default="F+", help="named window")
    p.add_argument("--level", type=int, default=4, help="graph level k")
    p.add_argument("--graph", type=Path, help="graph cache file (overrides --window/--level)")


def _graph(args):
    from .geometry import GasketGraph, build_window
    if args.graph is not None:
        return GasketGraph.load(args.graph)
    return build_window(WINDOWS[args.window], args.level)


def _add_domain_args(p):
    p.add_argument("--center", type=_point, default=None, help="ball centre a,b of the domain")
    p.add_argument("--r2", type=Fraction, default=None, help="squared ball radius of the domain")
    p.add_argument("--domain-file", type=Path, help="file with one vertex index per line")


def _domain(args, g) -> np.ndarray:
    from .geometry import sqdist_to
    if args.domain_file is not None:
        D = np.loadtxt(args.domain_file, dtype=np.int64, ndmin=1)
    elif args.center is not None and args.r2 is not None:
        d2 = sqdist_to(args.center, g)
        D = np.array([i for i in range(g.n) if d2[i] < args.r2], dtype=np.int64)
    else:
        raise UsageError("give --domain-file or both --center and --r2")
    D = np.unique(D)
    if len(D) == 0 or (D < 0).any() or (D >= g.n).any():
        raise UsageError("domain is empty or has indices outside the graph")
    return D[~g.rim[D]]


def _add_op_args(p):
    p.add_argument("--alpha", type=float, required=True)
    p.add_argument("--mode", choices=["spectral", "series"], default="spectral")
    p.add_argument("--boundary", choices=["absorbing", "reflecting"], default="absorbing")


def _operator(args, g):
    from .stable import StableParams, build_fractional_operator
    try:
        params = StableParams(args.alpha)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    return build_fractional_operator(g, params.beta, mode=args.mode, boundary=args.boundary)


def _vertex_rows(g, idx, values):
    for i, v in zip(idx, values):
        p = g.point(int(i))
        yield int(i), p.a, p.b, float(v)


def _finish(man, outdir, *paths):
    for p in paths:
        man.record(p)
    man.finish(outdir)


# ------------------------------------------------------------ commands

def cmd_build_graph(args):
    from .geometry import build_window
    g = build_window(WINDOWS[args.window], args.level)
    g.save(args.out)
    print(f"level {g.level}: {g.n} vertices, {len(g.cells)} cells, {int(g.rim.sum())} rim vertices -> {args.out}")
    return OK


def cmd_spline_eval(args):
    from .spline import phi0_state
    st = phi0_state(args.path, args.top)
    fmtv = (lambda x: f"{x.numerator}/{x.denominator}") if args.format == "rational" else \
        (lambda x: format(float(x), ".17g"))
    print("path", st.path or "-")
    print("values", " ".join(fmtv(v) for v in st.values))
    print("scaled_derivatives", " ".join(fmtv(v) for v in st.derivatives))
    return OK


def cmd_spline_verify(args):
    import time

    from .spline import verify_spline_condition, write_states_csv
    t = time.perf_counter()
    rep = verify_spline_condition(args.depth)
    dt = time.perf_counter() - t
    for k, v in rep.as_dict().items():
        print(f"{k}: {v}")
    print(f"elapsed_s: {dt:.3f}")
    if args.csv:
        n = write_states_csv(args.csv, args.depth)
        print(f"wrote {n} states to {args.csv}")
    return OK if rep.ok else FAILED


def cmd_cutoff(args):
    from .geometry import build_window
    from .spline import cells_meeting_ball, cutoff_assemble, cutoff_fractional_bound
    from .stable import StableParams
    window = WINDOWS[args.window]
    cells = build_window(window, args.order).cells_at(args.order)
    inside = cells_meeting_ball(cells, args.center, args.r2)
    cut = cutoff_assemble(inside, cells)
    beta = StableParams(args.alpha).beta
    rows = cutoff_fractional_bound(cut, window, beta, args.levels)
    print("level,bound,operational_max")
    for k, b, raw in rows:
        print(f"{k},{b:.17g},{raw:.17g}")
    vals = [b for _, b, _ in rows]
    ok = max(vals) <= args.factor * min(vals) if min(vals) > 0 else max(vals) == 0
    print(f"bounded within factor {args.factor}: {ok}")
    return OK if ok else FAILED


def cmd_solve_harmonic(args):
    from .io import RunManifest, write_csv
    from .stable import harmonic_solve
    g = _graph(args)
    D = _domain(args, g)
    op = _operator(args, g)
    data = np.zeros(g.n)
    if args.target_file:
        data[np.loadtxt(args.target_file, dtype=np.int64, ndmin=1)] = 1.0
    from .geometry import vertices_in_cells
    for c in args.target_cell or []:
        data[vertices_in_cells(g, [c])] = 1.0
    data[D] = 0.0
    sol = harmonic_solve(op, D, data)
    h = sol.on_domain()
    lh = op.apply(np.nan_to_num(sol.values))[D]
    cert = float(np.abs(lh).max())
    man = RunManifest("solve-harmonic", diagnostics={
        "condition": sol.condition, "certificate": cert, "max_killed": float(sol.killed.max()),
        "alpha": args.alpha, "level": g.level, "domain_size": len(D)})
    out = Path(args.out)
    p = write_csv(out / "harmonic.csv", ["vertex", "a", "b", "value"], _vertex_rows(g, D, h))
    p2 = write_csv(out / "killed.csv", ["vertex", "a", "b", "killed"], _vertex_rows(g, D, sol.killed))
    _finish(man, out, p, p2)
    ok = cert <= 1e-8 * max(1.0, float(np.abs(h).max())) and h.min() >= -1e-12
    print(f"solved |D|={len(D)} cond={sol.condition:.3e} certificate={cert:.3e} -> {p}")
    return OK if ok else FAILED


def cmd_exit_time(args):
    from .io import RunManifest, write_csv
    from .stable import exit_time_solve, time_per_jump
    g = _graph(args)
    D = _domain(args, g)
    op = _operator(args, g)
    t = exit_time_solve(op, D)
    out = Path(args.out)
    tpj = time_per_jump(op.beta, g.level)
    p = write_csv(out / "exit_time.csv", ["vertex", "a", "b", "steps"], _vertex_rows(g, D, t))
    _finish(RunManifest("exit-time", diagnostics={"time_per_jump": tpj, "alpha": args.alpha,
                                                  "level": g.level}), out, p)
    print(f"max E-steps {t.max():.6g} (continuous time {t.max() * tpj:.6g}) -> {p}")
    return OK if (t > 0).all() else FAILED


def cmd_green(args):
    from .io import RunManifest, write_csv
    from .stable import SolverError, exit_time_solve, green_table
    g = _graph(args)
    D = _domain(args, g)
    op = _operator(args, g)
    try:
        G = green_table(op, D, cap=args.cap)
    except SolverError as exc:
        raise UsageError(str(exc)) from None
    K = G.kernel
    sym = float(np.abs(K - K.T).max() / np.abs(K).max())
    rows_ok = float(np.abs(G.exit_steps() - exit_time_solve(op, D)).max())
    out = Path(args.out)
    rows = ((int(x), int(y), float(G.visits[i, j])) for i, x in enumerate(D) for j, y in enumerate(D))
    p = write_csv(out / "green.csv", ["x", "y", "visits"], rows)
    _finish(RunManifest("green", diagnostics={"symmetry_rel": sym, "row_sum_error": rows_ok}), out, p)
    ok = sym <= 1e-9 and rows_ok <= 1e-8 and G.visits.min() >= -1e-12
    print(f"|D|={len(D)} symmetry {sym:.2e} row-sum error {rows_ok:.2e} -> {p}")
    return OK if ok else FAILED


def cmd_lambda(args):
    from .stable import lambda_functional
    g = _graph(args)
    f = np.loadtxt(args.values) if args.values else np.ones(g.n)
    if len(f) != g.n:
        raise UsageError(f"values file has {len(f)} entries, graph has {g.n} vertices")
    val = lambda_functional(g, args.center, args.r2, f, args.alpha)
    print(format(val, ".17g"))
    return OK


def cmd_mc_validate(args):
    from .harness import run_mc_validation, run_subordinator_law
    from .io import emit_results
    rep = run_mc_validation(tuple(args.alphas), args.level, args.paths, args.seed)
    sub = run_subordinator_law(args.beta, args.samples, args.seed)
    rep.checks += sub.checks
    rep.summary["subordinator"] = sub.summary
    emit_results(rep, args.out, "mc-validate")
    return _report(rep)


def cmd_mc_harmonic(args):
    from .geometry import vertices_in_cells
    from .io import FREQUENCY_COLUMNS, RunManifest, write_csv
    from .mc import SeedPlan, estimate_harmonic_measure
    from .stable import StableParams
    g = _graph(args)
    D = _domain(args, g)
    targets = {}
    for i, c in enumerate(args.target_cell or []):
        targets[f"E{i + 1}"] = np.setdiff1d(vertices_in_cells(g, [c]), D)
    covered = np.concatenate(list(targets.values())) if targets else np.zeros(0, dtype=np.int64)
    rest = np.setdiff1d(np.setdiff1d(g.interior, D), covered)
    if len(rest):
        targets["rest"] = rest
    starts = [g.locate(p) for p in args.start]
    plan = SeedPlan(args.seed, args.paths)
    est = estimate_harmonic_measure(g, D, targets, starts, StableParams(args.alpha).beta, plan)
    out = Path(args.out)
    rows = ([args.alpha, *r] for r in est.rows())
    p = write_csv(out / "frequencies.csv", FREQUENCY_COLUMNS, rows)
    _finish(RunManifest("mc-harmonic", seed_plan=plan.as_dict(),
                        diagnostics={"flagged": est.flagged.tolist(), "warnings": est.warnings}), out, p)
    for w in est.warnings:
        print("warning:", w, file=sys.stderr)
    print(f"{len(starts)} starts x {len(est.labels)} targets, N={args.paths} -> {p}")
    return OK


def _report(rep) -> int:
    for c in rep.checks:
        status = "PASS" if c.passed else "FAIL"
        extra = f"  ({c.detail})" if c.detail else ""
        print(f"{status}  {c.name}: {c.value:.6g} (tol {c.tolerance:g}){extra}")
    return OK if rep.passed else FAILED


def cmd_bhi(args):
    from .harness import run_bhi, run_lemma_battery, run_scaling_suite
    from .io import emit_results
    battery = {"run": "bhi", "lemmas": "lemmas", "scaling": None}[args.action]
    overrides = dict(kv.split("=", 1) for kv in args.set or [])
    cfg = parse_config(args.config, {k.strip(): v.strip() for k, v in overrides.items()}, battery)
    if args.print_config:
        sys.stdout.write(cfg.text())
        return OK
    progress = (lambda msg: print(msg, file=sys.stderr)) if args.verbose else None
    if args.action == "run":
        rep = run_bhi(cfg, progress=progress)
    elif args.action == "lemmas":
        rep = run_lemma_battery(cfg, progress=progress)
    else:
        rep = run_scaling_suite(cfg)
    emit_results(rep, args.out, f"bhi {args.action}")
    return _report(rep)


# ------------------------------------------------------------ parser

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="gasket", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"gasket {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("build-graph", help="build a window graph and write the cache file")
    p.add_argument("--window", choices=sorted(WINDOWS), default="F+")
    p.add_argument("--level", type=int, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_build_graph)

    p = sub.add_parser("spline-eval", help="spline state along a cell path")
    p.add_argument("--path", default="", help="word over 1,2,3")
    p.add_argument("--top", type=int, default=1, choices=[1, 2, 3], help="vertex where phi0 = 1")
    p.add_argument("--format", choices=["rational", "decimal"], default="rational")
    p.set_defaults(func=cmd_spline_eval)

    p = sub.add_parser("spline-verify", help="exhaustive exact check of the spline inequalities")
    p.add_argument("--depth", type=int, default=6)
    p.add_argument("--csv", type=Path, help="also dump all states of this depth")
    p.set_defaults(func=cmd_spline_verify)

    p = sub.add_parser("cutoff", help="fractional Laplacian bound of a spline cutoff across levels")
    p.add_argument("--window", choices=sorted(WINDOWS), default="F+")
    p.add_argument("--order", type=int, default=3, help="order n of the cutoff cells")
    p.add_argument("--center", type=_point, default=_point("1/2,0"))
    p.add_argument("--r2", type=Fraction, default=Fraction(1, 64))
    p.add_argument("--alpha", type=float, default=0.5)
    p.add_argument("--levels", type=lambda s: [int(x) for x in s.split(",")], default=[5, 6, 7])
    p.add_argument("--factor", type=float, default=2.0)
    p.set_defaults(func=cmd_cutoff)

    for name, fn, hlp in (("solve-harmonic", cmd_solve_harmonic, "regular harmonic function in D"),
                          ("exit-time", cmd_exit_time, "expected exit jumps from D"),
                          ("green", cmd_green, "dense Green table of D")):
        p = sub.add_parser(name, help=hlp)
        _add_graph_args(p)
        _add_domain_args(p)
        _add_op_args(p)
        p.add_argument("--out", type=Path, default=Path("."))
        if name == "solve-harmonic":
            p.add_argument("--target-cell", type=_cellspec, action="append", help="a,b,order (repeatable)")
            p.add_argument("--target-file", type=Path)
        if name == "green":
            p.add_argument("--cap", type=int, default=3000)
        p.set_defaults(func=fn)

    p = sub.add_parser("lambda", help="tail functional Lambda_{v,r}(f)")
    _add_graph_args(p)
    p.add_argument("--center", type=_point, required=True)
    p.add_argument("--r2", type=Fraction, required=True)
    p.add_argument("--alpha", type=float, required=True)
    p.add_argument("--values", type=Path, help="file with one value per vertex (default f = 1)")
    p.set_defaults(func=cmd_lambda)

    p = sub.add_parser("mc-validate", help="Monte Carlo oracle battery and subordinator law")
    p.add_argument("--alphas", type=lambda s: [float(x) for x in s.split(",")], default=[0.3, 0.5, 0.7, 0.9])
    p.add_argument("--level", type=int, default=4)
    p.add_argument("--paths", type=int, default=100_000)
    p.add_argument("--beta", type=float, default=0.5)
    p.add_argument("--samples", type=int, default=1_000_000)
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--out", type=Path, default=Path("mc-validate"))
    p.set_defaults(func=cmd_mc_validate)

    p = sub.add_parser("mc-harmonic", help="Monte Carlo exit frequencies with exact binomial intervals")
    _add_graph_args(p)
    _add_domain_args(p)
    p.add_argument("--alpha", type=float, required=True)
    p.add_argument("--target-cell", type=_cellspec, action="append")
    p.add_argument("--start", type=_point, action="append", required=True)
    p.add_argument("--paths", type=int, default=100_000)
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--out", type=Path, default=Path("."))
    p.set_defaults(func=cmd_mc_harmonic)

    p = sub.add_parser("bhi", help="boundary Harnack, lemma and scaling batteries")
    p.add_argument("action", choices=["run", "lemmas", "scaling"])
    p.add_argument("--config", type=Path, help="key = value config file (defaults if omitted)")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config key")
    p.add_argument("--print-config", action="store_true", help="print the resolved config and exit")
    p.add_argument("--describe", action="store_true", help="print the documented schema and exit")
    p.add_argument("--out", type=Path, default=Path("results"))
    p.add_argument("-v", "--verbose", action="store_true")
    p.set_defaults(func=cmd_bhi)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if getattr(args, "describe", False):
        sys.stdout.write(describe())
        return OK
    try:
        return args.func(args)
    except (ConfigError, UsageError, KeyError, ValueError) as exc:
        print(f"gasket {args.command}: error: {exc}", file=sys.stderr)
        return USAGE


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
