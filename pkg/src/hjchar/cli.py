"""Command-line front end.

Every subcommand reads a JSON scenario (``--config``, or a bundled one by
name such as ``example43``) and writes CSV (or, for ``mpc``, CSV plus a
JSON summary) either to ``--out DIR`` or to standard output.

Exit status: 0 success, 1 acceptance failure, 2 configuration error,
3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import math
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import games as G
from .config import (
    ConfigError,
    build_mc,
    build_problem,
    build_search,
    build_tolerance,
    builtin_config,
    load_config,
)
from .fd_reference import grid_sample, lax_friedrichs_solve, viscosity
from .hj_core import (
    EikonalProblem,
    SmoothHamiltonianProblem,
    ValueTable,
    fmt,
    grid_points,
    value_bolza_eikonal,
    value_bvp_align,
    value_eikonal,
    value_smooth_hopf_lax,
    write_value_csv,
)
from .numerics import IntegrationError

EXIT_ACCEPTANCE = 1
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3

CFL_SAFETY = 0.9  # default FD step as a fraction of the CFL bound


class _Numerical(RuntimeError):
    pass


def _emit(text: str, out_dir, name: str):
    if out_dir is None:
        sys.stdout.write(text)
        return
    path = Path(out_dir)
    path.mkdir(parents=True, exist_ok=True)
    with open(path / name, "w", newline="") as fh:
        fh.write(text)


def _csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([fmt(v) for v in r])
    return buf.getvalue()


def _load(args) -> dict:
    src = args.config
    if not Path(src).exists() and "/" not in src and not src.endswith(".json"):
        try:
            return builtin_config(src)
        except FileNotFoundError:
            raise ConfigError(f"no config file or bundled scenario named {src!r}") from None
    if not Path(src).exists():
        raise ConfigError(f"config file {src} does not exist")
    return load_config(src)


def _query_points(cfg: dict, n: int) -> np.ndarray:
    q = cfg["query"]
    if "points" in q:
        pts = np.array(q["points"], dtype=float)
    elif "rectangle" in q:
        pts = grid_points([tuple(a) for a in q["rectangle"]], q.get("tail", []))
    else:
        raise ConfigError("query needs points or rectangle")
    if pts.ndim != 2 or pts.shape[1] != n:
        raise ConfigError(f"query points must have dimension {n}")
    return pts


def _evaluator(cfg: dict, seed: int):
    search = build_search(cfg, seed)
    tol = build_tolerance(cfg)
    mode = cfg["solver"]["mode"]

    def ev(problem, t0, x):
        if isinstance(problem, SmoothHamiltonianProblem):
            return value_smooth_hopf_lax(problem, t0, x, search, tol=tol, with_trajectory=False)
        if problem.is_bolza:
            return value_bolza_eikonal(problem, t0, x, search, tol=tol, with_trajectory=False)
        return value_eikonal(problem, t0, x, search, mode=mode, tol=tol, with_trajectory=False)

    return ev


def _value_problem(cfg):
    problem = build_problem(cfg)
    if isinstance(problem, tuple):
        raise ConfigError("game scenarios are evaluated with the 'game' subcommand")
    return problem


def _table(problem, cfg, pts, seed, threads) -> ValueTable:
    """Evaluate the query points in order; failed points are recorded."""
    ev = _evaluator(cfg, seed)
    t0 = float(cfg["query"]["t0"])

    def one(x):
        try:
            return ev(problem, t0, x)
        except (IntegrationError, ValueError, ArithmeticError):
            return None

    if threads > 1:
        with ThreadPoolExecutor(threads) as ex:
            results = list(ex.map(one, pts))
    else:
        results = [one(x) for x in pts]
    failed = [i for i, r in enumerate(results) if r is None]
    m = getattr(problem, "sphere_dim", problem.n)
    return ValueTable(t0, problem.n, m, pts, results, failed)


def cmd_value(args, cfg):
    problem = _value_problem(cfg)
    pts = _query_points(cfg, problem.n)[:1]
    table = _table(problem, cfg, pts, args.seed, 1)
    if table.failed:
        raise _Numerical(f"evaluation failed at {pts[0].tolist()}")
    _emit(write_value_csv(table), args.out, "value.csv")


def cmd_grid(args, cfg):
    problem = _value_problem(cfg)
    pts = _query_points(cfg, problem.n)
    table = _table(problem, cfg, pts, args.seed, args.threads)
    if len(table.failed) == len(pts):
        raise _Numerical("every evaluation failed")
    for i in table.failed:
        print(f"warning: evaluation failed at {pts[i].tolist()}", file=sys.stderr)
    _emit(write_value_csv(table), args.out, "grid.csv")


def _moc_values(problem, cfg, pts, seed, threads):
    table = _table(problem, cfg, pts, seed, threads)
    return table.values


def _fd_grid(problem, cfg, duration):
    fd = cfg["fd"]
    domain = [tuple(d) for d in fd["domain"]]
    dx = float(fd["dx"])
    if "dt" in fd:
        dt = float(fd["dt"])
    else:
        a1, a2 = viscosity(problem, domain)
        dt = CFL_SAFETY / (a1 / dx + a2 / dx)
    return lax_friedrichs_solve(problem, domain, dx, dt, duration)


def cmd_fd_compare(args, cfg):
    problem = _value_problem(cfg)
    if not isinstance(problem, EikonalProblem) or problem.n != 2:
        raise ConfigError("fd-compare needs a two-dimensional eikonal problem")
    pts = _query_points(cfg, 2)
    t0 = float(cfg["query"]["t0"])
    moc = _moc_values(problem, cfg, pts, args.seed, args.threads)
    grid = _fd_grid(problem, cfg, problem.T - t0)
    rows = []
    for x, vm in zip(pts, moc):
        vf = grid_sample(grid, x)
        rows.append([x[0], x[1], vm, vf, vm - vf])
    _emit(_csv(["x1", "x2", "V_MoC", "V_FD", "diff"], rows), args.out, "fd_compare.csv")


def cmd_bvp_compare(args, cfg):
    problem = _value_problem(cfg)
    if not isinstance(problem, EikonalProblem) or problem.is_bolza:
        raise ConfigError("bvp-compare needs a Mayer eikonal problem")
    pts = _query_points(cfg, problem.n)
    t0 = float(cfg["query"]["t0"])
    moc = _moc_values(problem, cfg, pts, args.seed, args.threads)
    search = build_search(dict(cfg, solver={**cfg["solver"], "evaluator": "sphere_grid"}))
    tol = build_tolerance(cfg)
    rows = []
    for x, vm in zip(pts, moc):
        try:
            vb = value_bvp_align(problem, t0, x, search, tol).value
        except (IntegrationError, ValueError):
            vb = math.nan
        rows.append([*x, vm, vb, vm - vb])
    header = [f"x{i + 1}" for i in range(problem.n)] + ["V_MoC", "V_BVP", "diff"]
    _emit(_csv(header, rows), args.out, "bvp_compare.csv")


def _aim(game: G.LinearGame, t0, lbar):
    P = game.phi(t0)[: game.k]
    u = game.U1.arg_support(-(lbar @ (P @ game.B1)))
    v = game.U2.arg_support(lbar @ (P @ game.B2))
    return u, v


def game_eval(kind: str, payload, t0: float, x, angles: int, quad_n: int) -> G.GameEval:
    """Evaluate one position of a game scenario built by ``build_problem``."""
    if kind == "game_ex40":
        return G.ex40_eval(payload, t0, x, angles)
    if kind in ("game_ex39", "game_ex34"):
        game = payload["game"]
        gap = G.closed_form_gap("ex39" if kind == "game_ex39" else "ex34_thm32", payload, t0)
    else:
        game = payload
        gap = math.nan
    vstar, vtilde, l = G.programmed_maximin_p36(game, t0, x, angles, quad_n)
    V = vstar if math.isnan(gap) else max(vstar, gap)
    if vtilde > 0 and (math.isnan(gap) or vtilde >= gap):
        u, v = _aim(game, t0, l)
        lbar = l
    else:
        lbar = None
        u = game.U1.arg_support(np.zeros(game.U1.dim))
        v = game.U2.arg_support(np.zeros(game.U2.dim))
    return G.GameEval(V, vstar, vtilde, lbar, u, v, gap)


def cmd_game(args, cfg):
    problem = build_problem(cfg)
    if not isinstance(problem, tuple):
        raise ConfigError("the 'game' subcommand needs a game_* problem kind")
    kind, payload = problem
    n = 4 if kind in ("game_ex40", "game_ex39", "game_ex34") else payload.n
    k = 2 if kind in ("game_ex40", "game_ex39", "game_ex34") else payload.k
    pts = _query_points(cfg, n)
    t0 = float(cfg["query"]["t0"])
    angles, quad_n = int(cfg["solver"]["angles"]), int(cfg["solver"]["quad_n"])
    rows = []
    udim = vdim = None
    for x in pts:
        e = game_eval(kind, payload, t0, x, angles, quad_n)
        lbar = e.lbar if e.lbar is not None else np.full(k, math.nan)
        udim, vdim = len(e.ubar), len(e.vbar)
        rows.append([t0, *x, e.V, e.Vstar, e.Vtilde, *lbar, *e.ubar, *e.vbar])
    header = (["t"] + [f"x{i + 1}" for i in range(n)] + ["V", "Vstar", "Vtilde"]
              + [f"lbar{i + 1}" for i in range(k)] + [f"ubar{i + 1}" for i in range(udim)]
              + [f"vbar{i + 1}" for i in range(vdim)])
    _emit(_csv(header, rows), args.out, "game.csv")


def cmd_mpc(args, cfg):
    from .mpc_sim import build_open_loop, compare_report, simulate_runs, summary_json, write_stats_csv

    problem = _value_problem(cfg)
    if not isinstance(problem, EikonalProblem) or not problem.is_bolza:
        raise ConfigError("mpc needs a bolza_eikonal problem")
    x0 = _query_points(cfg, problem.n)[0]
    t0 = float(cfg["query"]["t0"])
    mc = build_mc(cfg, problem.n, args.paper_scale, args.seed)
    schedule = build_open_loop(problem, t0, x0)
    ol = simulate_runs(problem, schedule, mc, t0, x0, threads=args.threads)
    cl = simulate_runs(problem, "mpc", mc, t0, x0, threads=args.threads)
    report = compare_report(ol, cl)
    stats = write_stats_csv(ol, cl)
    summary = summary_json(report, mc)
    if args.out is None:
        sys.stdout.write(summary)
    else:
        _emit(stats, args.out, "mpc_stats.csv")
        _emit(summary, args.out, "mpc_summary.json")


def cmd_selftest(args):
    from .acceptance import CRITERIA, run_criteria

    which = None
    if args.only:
        try:
            which = [int(s) for s in args.only.split(",")]
        except ValueError:
            raise ConfigError("--only takes a comma-separated list of criterion numbers") from None
        bad = [w for w in which if w not in CRITERIA]
        if bad:
            raise ConfigError(f"unknown criteria {bad}")
    results = run_criteria(which, threads=args.threads, stream=sys.stdout)
    return 0 if all(r.passed for r in results) else EXIT_ACCEPTANCE


COMMANDS = {
    "value": cmd_value,
    "grid": cmd_grid,
    "fd-compare": cmd_fd_compare,
    "bvp-compare": cmd_bvp_compare,
    "game": cmd_game,
    "mpc": cmd_mpc,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hjchar", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in [*COMMANDS, "selftest"]:
        p = sub.add_parser(name)
        if name != "selftest":
            p.add_argument("--config", required=True, help="scenario JSON file or bundled scenario name")
        else:
            p.add_argument("--only", help="comma-separated criterion numbers (default: all)")
        p.add_argument("--out", help="output directory (default: standard output)")
        p.add_argument("--threads", type=int, default=1, help="worker threads (never changes results)")
        p.add_argument("--seed", type=int, default=None, help="override the scenario seed")
        p.add_argument("--paper-scale", action="store_true",
                       help="Monte Carlo at 1000 runs with SDE step 1e-5")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.threads < 1:
        print("error: --threads must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        if args.command == "selftest":
            return cmd_selftest(args)
        cfg = _load(args)
        if args.seed is None:
            args.seed = int(cfg["seed"])
        COMMANDS[args.command](args, cfg)
    except BrokenPipeError:
        # output piped into a reader that stopped early (e.g. head)
        sys.stderr.close()
        return 0
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (_Numerical, IntegrationError, ArithmeticError, ValueError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    return 0


if __name__ == "__main__":
    sys.exit(main())
