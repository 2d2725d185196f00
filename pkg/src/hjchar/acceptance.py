"""Acceptance checks for the bundled scenarios.

Each criterion is a function returning ``(passed, detail)``; the runner
times it and also fails it when it exceeds its wall-clock limit. The
``hjchar selftest`` command and ``tests/test_acceptance.py`` both go
through :func:`run_criteria`.
"""

from __future__ import annotations

import itertools
import math
import os
import sys
import time
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import games as G
from .fd_reference import grid_sample, lax_friedrichs_solve, viscosity
from .fields import Constant, GaussOffset, NormSquaredHalf, Quadratic
from .hj_core import (
    EikonalProblem,
    PowellSearch,
    SphereGridSearch,
    value_bolza_eikonal,
    value_bvp_align,
    value_eikonal,
)
from .numerics import RngSeed, ToleranceSpec, integrate_adaptive, quad_simpson

HMAX_REFERENCE = 0.0307
FD_DOMAIN = ((-5.0, 5.0), (-3.0, 3.0))
SAMPLE_BOX = ((-3.0, 3.0), (-1.5, 1.5))
EX45_X0 = (-0.5, 0.5, 0.3, -0.3, 0.3, -0.3)


@dataclass
class CriterionResult:
    number: int
    name: str
    passed: bool
    detail: str
    elapsed: float
    limit: float

    def line(self) -> str:
        tag = "PASS" if self.passed else "FAIL"
        return f"[{tag}] {self.number:2d} {self.name}: {self.detail} ({self.elapsed:.1f}s, limit {self.limit:g}s)"


# --------------------------------------------------------------------------
# shared problem data


def ex43_problem(n: int = 2, constant_speed: bool = False) -> EikonalProblem:
    """Gaussian speed bump (or unit speed) with an elliptic terminal payoff."""
    center = [1.0, 1.0] + [0.0] * (n - 2)
    c = Constant(1.0, n) if constant_speed else GaussOffset(1.0, 3.0, 4.0, center)
    sigma = Quadratic.diagonal([0.25, 1.0] + [0.5] * (n - 2), -0.5)
    return EikonalProblem(c, sigma, 0.5, critical_point=np.zeros(n))


def _box_points(count: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    (a, b), (c, d) = SAMPLE_BOX
    return np.column_stack([rng.uniform(a, b, count), rng.uniform(c, d, count)])


def _lf(problem, dx, duration):
    a1, a2 = viscosity(problem, FD_DOMAIN)
    dt = 0.9 / (a1 / dx + a2 / dx)
    return lax_friedrichs_solve(problem, FD_DOMAIN, dx, dt, duration, (a1, a2))


def reachable_ball_max(sigma, x0, radius: float, radial: int = 201, angular: int = 4000) -> float:
    """Brute-force ``max sigma`` over the closed disc of reachable points."""
    r = np.linspace(0.0, radius, radial)
    th = np.linspace(0.0, 2 * math.pi, angular, endpoint=False)
    R, TH = np.meshgrid(r, th, indexing="ij")
    pts = np.column_stack([x0[0] + (R * np.cos(TH)).ravel(), x0[1] + (R * np.sin(TH)).ravel()])
    return float(np.max(sigma.values(pts)))


def bolza_brute_force(levels=(-1.0, 0.0, 1.0), pieces: int = 8, x0: float = 1.0, T: float = 1.0) -> float:
    """Exact cost ``int 0.5 x^2`` of every piecewise-constant control for
    ``x' = -u`` and the minimum over all of them."""
    h = T / pieces
    best = math.inf
    for us in itertools.product(levels, repeat=pieces):
        x, J = x0, 0.0
        for u in us:
            x1 = x - u * h
            J += h * (x * x + x * x1 + x1 * x1) / 6.0  # exact for linear x
            x = x1
        best = min(best, J)
    return best


# --------------------------------------------------------------------------
# criteria


def crit_hmax():
    p = G.Ex40Params()
    G._ex40_hmax.cache_clear()
    hmax = G.ex40_eval(p, 0.0, np.zeros(4)).hmax
    oracle = 0.1 - 0.1 * math.log(2.0)
    ok = abs(hmax - HMAX_REFERENCE) <= 5e-4 and abs(hmax - oracle) <= 1e-6
    return ok, f"hmax={hmax:.7f} (reference {HMAX_REFERENCE}, closed form {oracle:.7f})"


def crit_game_surface():
    p = G.Ex40Params()
    axis = np.linspace(-0.2, 0.2, 41)
    worst_order, worst_gap_zero, max_gap, hmax = 0.0, 0.0, -math.inf, None
    for x1 in axis:
        for x2 in axis:
            e = G.ex40_eval(p, 0.0, [x1, x2, 0.0, 0.0])
            hmax = e.hmax
            gap = e.V - e.Vstar
            worst_order = min(worst_order, gap)
            max_gap = max(max_gap, gap)
            if e.Vtilde > e.hmax:
                worst_gap_zero = max(worst_gap_zero, abs(gap))
    ok = worst_order >= 0.0 and abs(max_gap - hmax) <= 1e-3 and worst_gap_zero == 0.0
    return ok, (f"min(V-V*)={worst_order:.3g}, max(V-V*)={max_gap:.6f} vs hmax={hmax:.6f}, "
                f"max|V-V*| where V~*>hmax = {worst_gap_zero:.3g}")


def crit_constant_speed_oracle():
    prob = ex43_problem(constant_speed=True)
    pts = _box_points(10, 1)
    oracle = np.array([reachable_ball_max(prob.sigma, x, prob.T) for x in pts])
    moc = np.array([value_eikonal(prob, 0.0, x, SphereGridSearch(1000), with_trajectory=False).value for x in pts])
    errs = {}
    for dx in (0.04, 0.02):
        g = _lf(prob, dx, prob.T)
        errs[dx] = float(np.max(np.abs([grid_sample(g, x) - o for x, o in zip(pts, oracle)])))
    e_moc = float(np.max(np.abs(moc - oracle)))
    ok = e_moc <= 1e-3 and errs[0.02] <= 5e-2 and errs[0.02] < errs[0.04]
    return ok, f"max|MoC-oracle|={e_moc:.2e}, max|LF-oracle| dx=0.04: {errs[0.04]:.4f}, dx=0.02: {errs[0.02]:.4f}"


def crit_cross_method():
    prob = ex43_problem()
    pts = np.array([(a, b) for a in np.linspace(-3, 3, 13) for b in np.linspace(-1.5, 1.5, 7)])
    moc = np.array([value_eikonal(prob, 0.0, x, SphereGridSearch(1000), with_trajectory=False).value for x in pts])
    stats = {}
    for dx in (0.02, 0.01):
        g = _lf(prob, dx, prob.T)
        d = np.abs(np.array([grid_sample(g, x) for x in pts]) - moc)
        stats[dx] = (float(np.median(d)), float(np.max(d)))
    ok = stats[0.01][0] <= 0.03 and stats[0.01][1] <= stats[0.02][1]
    return ok, (f"median/max |MoC-LF| dx=0.02: {stats[0.02][0]:.4f}/{stats[0.02][1]:.4f}, "
                f"dx=0.01: {stats[0.01][0]:.4f}/{stats[0.01][1]:.4f}")


def crit_bvp():
    prob = ex43_problem()
    axis1 = np.linspace(-3.0, 3.0, 61)
    axis2 = np.linspace(-1.5, 1.5, 31)
    search = SphereGridSearch(1000)
    diffs = []
    for x in itertools.product(axis1, axis2):
        vm = value_eikonal(prob, 0.0, x, search, with_trajectory=False).value
        vb = value_bvp_align(prob, 0.0, x, search).value
        diffs.append(vm - vb)
    diffs = np.array(diffs)
    ok = float(diffs.min()) >= -1e-6 and int(np.sum(diffs > 0.01)) >= 1
    return ok, f"min(V_MoC-V_BVP)={diffs.min():.3g}, nodes with diff>0.01: {int(np.sum(diffs > 0.01))}/{diffs.size}"


def crit_sphere_stability():
    prob = ex43_problem()
    pts = _box_points(20, 2)
    d = [abs(value_eikonal(prob, 0.0, x, SphereGridSearch(1000), with_trajectory=False).value
             - value_eikonal(prob, 0.0, x, SphereGridSearch(2000), with_trajectory=False).value) for x in pts]
    worst = float(max(d))
    return worst <= 1e-3, f"max|V(1000)-V(2000)|={worst:.2e} at 20 positions"


PLANE_POINTS = ((-2.0, -1.0), (-1.0, 0.5), (0.0, 0.8), (1.5, -0.5), (2.5, 1.0))


def crit_high_dimension():
    p2 = ex43_problem(2)
    d2 = []
    for x in PLANE_POINTS:
        vp = value_eikonal(p2, 0.0, x, PowellSearch(5, 1e-7, RngSeed(0)), with_trajectory=False).value
        vb = value_eikonal(p2, 0.0, x, SphereGridSearch(2000), with_trajectory=False).value
        d2.append(abs(vp - vb))
    p5 = ex43_problem(5)
    d5 = []
    for x in PLANE_POINTS:
        x5 = [*x, 0.0, 0.0, 0.0]
        va = value_eikonal(p5, 0.0, x5, PowellSearch(5, 1e-7, RngSeed(0)), with_trajectory=False).value
        vb = value_eikonal(p5, 0.0, x5, PowellSearch(5, 1e-7, RngSeed(1)), with_trajectory=False).value
        d5.append(abs(va - vb))
    ok = max(d2) <= 1e-3 and max(d5) <= 1e-3
    return ok, f"n=2 max|Powell-grid2000|={max(d2):.2e}; n=5 max|seed0-seed1|={max(d5):.2e}"


def crit_ex28():
    a1, a2, T = 2.0, 1.0, 1.0
    game = G.ex28_game(a1, a2, T)
    rng = np.random.default_rng(3)
    worst = 0.0
    for _ in range(10):
        t0 = rng.uniform(0.0, T)
        x0 = rng.uniform(-1.5, 1.5, 2)
        vstar, _, _ = G.programmed_maximin_p36(game, t0, x0)
        closed = max(float(np.linalg.norm(x0)) + (a2 - a1) * (T - t0), 0.0)
        worst = max(worst, abs(vstar - closed))
    return worst <= 1e-4, f"max|V*-closed form|={worst:.2e} at 10 positions"


def crit_bolza_1d():
    prob = EikonalProblem(Constant(-1.0, 1), Constant(0.0, 1), 1.0, eta=NormSquaredHalf(1), critical_point=[0.0])
    v = value_bolza_eikonal(prob, 0.0, [1.0], PowellSearch(tol=1e-7), with_trajectory=False).value
    bf = bolza_brute_force()
    ok = abs(v - 1 / 6) <= 1e-3 and abs(v - bf) <= 1e-3 and v <= bf + 1e-6
    return ok, f"V={v:.7f}, brute force over 3^8 controls={bf:.7f}, 1/6={1 / 6:.7f}"


def crit_mpc(threads: Optional[int] = None):
    from .mpc_sim import McConfig, build_open_loop, ex45_problem, simulate_runs

    threads = threads or os.cpu_count() or 1
    prob = ex45_problem()
    cfg = McConfig(dt_sde=1e-3, runs=200)
    schedule = build_open_loop(prob, 0.0, EX45_X0)
    ol = simulate_runs(prob, schedule, cfg, 0.0, EX45_X0, threads=threads)
    cl = simulate_runs(prob, "mpc", cfg, 0.0, EX45_X0, threads=threads)
    quiet = McConfig(dt_sde=1e-3, runs=1, noise_diag=(0.0,) * prob.n)
    ol0 = simulate_runs(prob, schedule, quiet, 0.0, EX45_X0)
    cl0 = simulate_runs(prob, "mpc", quiet, 0.0, EX45_X0)
    ok = (cl.J < ol.J and 0.09 <= cl.J <= 0.15 and 0.15 <= ol.J <= 0.23 and abs(cl0.J - ol0.J) <= 1e-3)
    return ok, (f"J_cl={cl.J:.4f}+-{cl.J_se:.4f}, J_ol={ol.J:.4f}+-{ol.J_se:.4f}; "
                f"noise-free |J_cl-J_ol|={abs(cl0.J - ol0.J):.2e}; threads={threads}")


def crit_numerics():
    traj = integrate_adaptive(lambda t, y: -y, 0.0, 1.0, np.array([1.0]), ToleranceSpec(1e-10, 1e-10))
    e_exp = abs(traj.y_final[0] - math.exp(-1.0))
    exact = math.e - 1.0
    e1 = abs(quad_simpson(math.exp, 0.0, 1.0, 8) - exact)
    e2 = abs(quad_simpson(math.exp, 0.0, 1.0, 16) - exact)
    ratio = e1 / e2
    A = G.ex40_game(G.Ex40Params()).A
    e_phi = float(np.max(np.abs(G.cauchy_matrix(A, 2.0, 0.3) - G.cauchy_matrix_ode(A, 2.0, 0.3))))
    gap = G.closed_form_gap("ex34_thm32", dict(alpha=1.0, a=0.2, b_lower=0.1, b_upper=0.0, T=2.0), 0.0)
    ok = e_exp <= 1e-6 and ratio >= 8 and e_phi <= 1e-8 and abs(gap - HMAX_REFERENCE) <= 5e-4
    return ok, f"|y(1)-1/e|={e_exp:.1e}, Simpson ratio={ratio:.2f}, |Phi_expm-Phi_ode|={e_phi:.1e}, gap={gap:.6f}"


CRITERIA: dict = {
    1: ("game h maximum", 1.0, crit_hmax),
    2: ("game value surfaces", 10.0, crit_game_surface),
    3: ("constant-speed oracle", 120.0, crit_constant_speed_oracle),
    4: ("characteristics vs Lax-Friedrichs", 600.0, crit_cross_method),
    5: ("alignment comparator", 300.0, crit_bvp),
    6: ("sphere-grid stability", 60.0, crit_sphere_stability),
    7: ("high-dimension consistency", 300.0, crit_high_dimension),
    8: ("programmed maximin closed form", 10.0, crit_ex28),
    9: ("Bolza 1-D oracle", 30.0, crit_bolza_1d),
    10: ("MPC versus open loop", 900.0, crit_mpc),
    11: ("numerics unit checks", 10.0, crit_numerics),
}


def run_criterion(number: int, threads: Optional[int] = None) -> CriterionResult:
    name, limit, fn = CRITERIA[number]
    start = time.perf_counter()
    try:
        ok, detail = fn(threads) if fn is crit_mpc else fn()
    except Exception as exc:  # a crash is a failure with a diagnostic
        ok, detail = False, f"raised {type(exc).__name__}: {exc}"
    elapsed = time.perf_counter() - start
    if elapsed > limit:
        detail += "; over time limit"
    return CriterionResult(number, name, bool(ok) and elapsed <= limit, detail, elapsed, limit)


def run_criteria(which=None, threads: Optional[int] = None, stream=None) -> list:
    results = []
    for number in which or sorted(CRITERIA):
        r = run_criterion(number, threads)
        if stream is not None:
            print(r.line(), file=stream, flush=True)
        results.append(r)
    return results


if __name__ == "__main__":
    sys.exit(0 if all(r.passed for r in run_criteria(stream=sys.stdout)) else 1)
