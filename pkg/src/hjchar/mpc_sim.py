"""Monte Carlo comparison of open-loop and recomputed-feedback control
for eikonal dynamics perturbed by additive diagonal noise.

Each run integrates ``dx = c(x) u dt + diag(noise) dW`` by Euler-Maruyama
on a fixed grid with its own random stream (stream index = run index).
The open-loop controller replays the deterministic optimal control; the
MPC controller recomputes the optimal feedback every ``dt_recomp`` and
holds it constant in between. Statistics of ``eta(x(t))`` are reduced in
run order, so results do not depend on the number of worker threads.
"""

from __future__ import annotations

import csv
import io
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .hj_core import MIN, EikonalProblem, PowellSearch, carry_adjoint, fmt, value_bolza_eikonal
from .numerics import IntegrationError, RngSeed, ToleranceSpec, integrate_sde_em

__all__ = [
    "McConfig",
    "RunStats",
    "OpenLoopSchedule",
    "build_open_loop",
    "MpcFeedback",
    "simulate_runs",
    "compare_report",
    "write_stats_csv",
    "summary_json",
    "ex45_problem",
]

RATIO_SLACK = 1e-9


@dataclass(frozen=True)
class McConfig:
    dt_sde: float = 1e-3
    dt_recomp: float = 0.05
    runs: int = 200
    seed: RngSeed = RngSeed(0)
    noise_diag: tuple = (0.3, 0.3, 0.0, 0.0, 0.0, 0.0)

    def __post_init__(self):
        if self.dt_sde <= 0 or self.dt_recomp <= 0:
            raise ValueError("time steps must be positive")
        if self.runs < 1:
            raise ValueError("runs must be >= 1")
        r = self.dt_recomp / self.dt_sde
        if abs(r - round(r)) > RATIO_SLACK * max(1.0, r) or round(r) < 1:
            raise ValueError("dt_recomp must be an integer multiple of dt_sde")
        object.__setattr__(self, "noise_diag", tuple(float(v) for v in self.noise_diag))

    @property
    def ratio(self) -> int:
        return int(round(self.dt_recomp / self.dt_sde))

    @classmethod
    def paper_scale(cls, **kw) -> "McConfig":
        kw.setdefault("dt_sde", 1e-5)
        kw.setdefault("runs", 1000)
        return cls(**kw)


@dataclass
class RunStats:
    times: np.ndarray
    mean_eta: np.ndarray
    std_eta: np.ndarray
    J: float
    J_se: float
    run_costs: np.ndarray = field(repr=False, default=None)


@dataclass
class OpenLoopSchedule:
    """Optimal open-loop control: ``p(t)/|p(t)|`` along the optimal
    characteristic before ``hit_time`` and zero afterwards."""

    times: np.ndarray
    controls: np.ndarray
    hit_time: Optional[float]
    value: float
    _traj: object = field(repr=False, default=None)
    _n: int = 0

    def __call__(self, t: float) -> np.ndarray:
        if self._traj is None or (self.hit_time is not None and t >= self.hit_time):
            return np.zeros(self.controls.shape[1])
        t = min(max(t, self._traj.times[0]), self._traj.t_final)
        p = self._traj(t)[self._n + 1 :]
        pn = float(np.linalg.norm(p))
        return p / pn if pn > 0 else np.zeros_like(p)


def build_open_loop(problem: EikonalProblem, t0: float, x0, search=None,
                    tol: ToleranceSpec = ToleranceSpec()) -> OpenLoopSchedule:
    res = value_bolza_eikonal(problem, t0, x0, search or PowellSearch(tol=1e-5), tol=tol)
    n = problem.n
    if res.stationary or (res.stop_time is not None and res.stop_time <= t0):
        return OpenLoopSchedule(np.array([t0]), np.zeros((1, n)), t0, res.value)
    traj = res.trajectory
    P = traj.states[:, n + 1 :]
    norms = np.linalg.norm(P, axis=1, keepdims=True)
    U = np.divide(P, norms, out=np.zeros_like(P), where=norms > 0)
    return OpenLoopSchedule(traj.times.copy(), U, res.stop_time, res.value, traj, n)


def ex45_problem(n: int = 6, T: float = 2.0) -> EikonalProblem:
    """Bolza eikonal problem with a Gaussian bump in the speed, zero
    terminal cost and a diagonal quadratic running cost."""
    from .fields import Constant, GaussOffset, Quadratic

    center = [1.0, 1.0] + [0.0] * (n - 2)
    diag = [0.25, 1.0] + [0.5] * (n - 2)
    return EikonalProblem(GaussOffset(-1.0, -3.0, 4.0, center), Constant(0.0, n), T,
                          eta=Quadratic.diagonal(diag), critical_point=np.zeros(n))


class MpcFeedback:
    """Recomputed optimal feedback for one trajectory.

    Every evaluation runs Powell from ``search.restarts`` random starts plus
    one warm start: the previous optimal characteristic carried forward to
    the current time. Without noise the warm start is the continuation of
    the optimal characteristic, so the recomputation reproduces it.
    """

    def __init__(self, problem: EikonalProblem, search: PowellSearch = PowellSearch(tol=1e-5)):
        self.problem = problem
        self.search = search
        self._prev = None

    def __call__(self, t: float, x) -> np.ndarray:
        pr = self.problem
        x = np.asarray(x, dtype=float)
        if pr.freezes:
            s = 1.0 if pr.sense == MIN else -1.0
            if s * (pr.eta(x) - pr.eta_critical) < pr.critical_tol:
                return np.zeros(pr.n)
        warm = None
        if self._prev is not None:
            warm = carry_adjoint(pr, *self._prev, t)
        res = value_bolza_eikonal(pr, t, x, self.search, with_trajectory=False, warm_start=warm)
        self._prev = None if res.stationary else (t, x.copy(), res.p0_opt)
        return res.control_at_t0


class _Controller:
    """Drift ``c(x) u`` whose control is a fixed schedule or a feedback
    recomputed every ``ratio`` Euler-Maruyama steps."""

    def __init__(self, problem, schedule, feedback, ratio):
        self.problem = problem
        self.schedule = schedule
        self.feedback = feedback
        self.ratio = ratio
        self.calls = 0
        self.u = np.zeros(problem.n)

    def __call__(self, t, y):
        if self.schedule is not None:
            u = self.schedule(t)
        else:
            if self.calls % self.ratio == 0:
                self.u = np.asarray(self.feedback(t, y), dtype=float)
            u = self.u
        self.calls += 1
        return self.problem.c(y) * u


def _pairwise_sum(rows: np.ndarray) -> np.ndarray:
    """Sum over the first axis by a fixed binary tree."""
    if rows.shape[0] == 1:
        return rows[0].copy()
    mid = rows.shape[0] // 2
    return _pairwise_sum(rows[:mid]) + _pairwise_sum(rows[mid:])


def _trapezoid(y: np.ndarray, t: np.ndarray) -> float:
    return float(np.sum(0.5 * (y[1:] + y[:-1]) * np.diff(t)))


def simulate_runs(
    problem: EikonalProblem,
    controller,
    cfg: McConfig,
    t0: float,
    x0,
    threads: int = 1,
    progress: Optional[Callable[[int], None]] = None,
) -> RunStats:
    """Monte Carlo statistics of ``eta`` along noisy trajectories.

    ``controller`` is an :class:`OpenLoopSchedule`, the string ``"mpc"``
    (a fresh :class:`MpcFeedback` per run), or any callable
    ``feedback(t, x) -> u``, used as an MPC feedback.
    Each run's cost is the trapezoidal integral of ``eta`` on the SDE grid
    plus ``sigma(x(T))``, so the estimate equals the trapezoid of the mean.
    """
    if len(cfg.noise_diag) != problem.n:
        raise ValueError("noise_diag must match the state dimension")
    x0 = np.asarray(x0, dtype=float)
    mpc = isinstance(controller, str) and controller == "mpc"
    if isinstance(controller, OpenLoopSchedule):
        schedule, feedback = controller, None
    elif mpc:
        schedule, feedback = None, None
    elif callable(controller):
        schedule, feedback = None, controller
    else:
        raise ValueError("controller must be a schedule, 'mpc' or a feedback callable")

    def one(run):
        fb = MpcFeedback(problem) if mpc else feedback
        drift = _Controller(problem, schedule, fb, cfg.ratio)
        seed = RngSeed(cfg.seed.seed, run)
        try:
            path = integrate_sde_em(drift, cfg.noise_diag, cfg.dt_sde, t0, problem.T, x0, seed)
        except (IntegrationError, ValueError, ArithmeticError) as exc:
            raise IntegrationError(f"run {run} failed: {exc}") from exc
        eta = problem.eta.values(path.states)
        if progress is not None:
            progress(run)
        return path.times, eta, problem.sigma(path.states[-1])

    if threads > 1:
        with ThreadPoolExecutor(threads) as ex:
            out = list(ex.map(one, range(cfg.runs)))
    else:
        out = [one(r) for r in range(cfg.runs)]

    times = out[0][0]
    E = np.stack([o[1] for o in out])
    sig = np.array([o[2] for o in out])
    costs = np.array([_trapezoid(e, times) for e in E]) + sig
    R = cfg.runs
    mean = _pairwise_sum(E) / R
    if R > 1:
        std = np.sqrt(np.maximum(_pairwise_sum((E - mean) ** 2) / (R - 1), 0.0))
        J_se = float(np.std(costs, ddof=1) / math.sqrt(R))
    else:
        std = np.zeros_like(mean)
        J_se = 0.0
    J = _trapezoid(mean, times) + float(_pairwise_sum(sig[:, None])[0] / R)
    return RunStats(times, mean, std, J, J_se, costs)


@dataclass
class CompareReport:
    J_ol: float
    J_ol_se: float
    J_cl: float
    J_cl_se: float
    difference: float
    cl_better: bool

    def as_dict(self) -> dict:
        return {
            "J_ol": self.J_ol,
            "J_ol_se": self.J_ol_se,
            "J_cl": self.J_cl,
            "J_cl_se": self.J_cl_se,
            "difference": self.difference,
            "cl_better": self.cl_better,
        }


def compare_report(stats_ol: RunStats, stats_cl: RunStats) -> CompareReport:
    """``difference = J_ol - J_cl``; ``cl_better`` is ``J_cl < J_ol``."""
    if stats_ol.times.shape != stats_cl.times.shape or not np.array_equal(stats_ol.times, stats_cl.times):
        raise ValueError("time grids differ")
    return CompareReport(stats_ol.J, stats_ol.J_se, stats_cl.J, stats_cl.J_se, stats_ol.J - stats_cl.J,
                         bool(stats_cl.J < stats_ol.J))


def write_stats_csv(stats_ol: RunStats, stats_cl: RunStats, dest=None) -> str:
    compare_report(stats_ol, stats_cl)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["t", "mean_eta_ol", "std_eta_ol", "mean_eta_cl", "std_eta_cl"])
    for row in zip(stats_ol.times, stats_ol.mean_eta, stats_ol.std_eta, stats_cl.mean_eta, stats_cl.std_eta):
        w.writerow([fmt(v) for v in row])
    text = buf.getvalue()
    if dest is not None:
        with open(dest, "w", newline="") as fh:
            fh.write(text)
    return text


def summary_json(report: CompareReport, cfg: McConfig, dest=None) -> str:
    doc = dict(report.as_dict())
    doc["config"] = {
        "dt_sde": cfg.dt_sde,
        "dt_recomp": cfg.dt_recomp,
        "runs": cfg.runs,
        "seed": cfg.seed.seed,
        "noise_diag": list(cfg.noise_diag),
    }
    text = json.dumps(doc, indent=2, sort_keys=True) + "\n"
    if dest is not None:
        with open(dest, "w", newline="") as fh:
            fh.write(text)
    return text
