"""Value evaluation at isolated positions by integrating characteristic
Cauchy problems and optimising over initial adjoints.

Two problem families are supported:

* :class:`EikonalProblem` -- dynamics ``x' = c(x) u`` with ``|u| <= 1``,
  terminal cost ``sigma`` and optional running cost ``eta``. ``c < 0``
  makes it a minimisation problem, ``c > 0`` a maximisation problem.
  With ``eta`` present the running cost is appended as an extra state and
  the search runs over the unit sphere in ``R^(n+1)``.
* :class:`SmoothHamiltonianProblem` -- a general smooth Hamiltonian given
  by callbacks; the value is a finite-dimensional max (or min) over
  initial adjoints of the terminal payoff corrected by the Lagrangian
  integral accumulated along the characteristic.

Eikonal problems built from the closed field library run through the
compiled kernels in :mod:`hjchar._kernels`; anything else (callback
fields) goes through a pure-Python shooter sharing the same integrator.
"""

from __future__ import annotations

import csv
import io
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Union

import numpy as np

from . import _kernels as K
from .fields import ScalarField, random_angles, sphere_angles, sphere_embed, sphere_grid
from .numerics import (
    IntegrationError,
    RngSeed,
    ToleranceSpec,
    Trajectory,
    golden_section_max,
    integrate_adaptive,
    integrate_with_stop,
    minimize_powell,
)

__all__ = [
    "MIN",
    "MAX",
    "EikonalProblem",
    "SmoothHamiltonianProblem",
    "CharState",
    "ValueResult",
    "SphereGridSearch",
    "PowellSearch",
    "characteristic_rhs",
    "value_eikonal",
    "value_bolza_eikonal",
    "value_smooth_hopf_lax",
    "feedback_control",
    "carry_adjoint",
    "value_bvp_align",
    "eval_value_grid",
    "ValueTable",
    "write_value_csv",
]

MIN = "min"
MAX = "max"
NONVANISHING = "nonvanishing_gradient"
CRITICAL = "critical_extremal"
CONDITIONS = (NONVANISHING, CRITICAL)

EMPTY_HORIZON = "empty horizon"
DEGENERATE_ALIGNMENT = "degenerate alignment"

GRAD_ZERO = 1e-10  # gradients below this count as vanishing in the sampled checks


# --------------------------------------------------------------------------
# problems


def _sample_points(n, count, radius, seed, center=None):
    rng = np.random.default_rng(seed)
    pts = rng.uniform(-radius, radius, size=(count, n))
    if center is not None:
        pts += np.asarray(center, dtype=float)
    return pts


@dataclass(frozen=True, eq=False)
class EikonalProblem:
    """``x' = c(x) u``, ``|u| <= 1``; payoff ``sigma(x(T)) + int eta``.

    ``condition`` declares which structural assumption makes the sphere
    search valid:

    * ``"nonvanishing_gradient"`` -- the gradient of ``sigma`` (Mayer case)
      or of ``eta`` (Bolza case) never vanishes;
    * ``"critical_extremal"`` -- every critical point is a global extremum
      of the appropriate kind. In the Bolza case ``critical_point`` (the
      point ``x'`` where ``D eta`` vanishes) is required and trajectories
      freeze on reaching it to within ``critical_tol`` in ``eta``.

    The declaration is checked on ``verify_samples`` random points; a
    global check is not possible numerically.
    """

    c: ScalarField
    sigma: ScalarField
    T: float
    eta: Optional[ScalarField] = None
    condition: str = CRITICAL
    critical_point: Optional[np.ndarray] = None
    critical_tol: float = 5e-6
    verify_samples: int = 1000
    verify_radius: float = 3.0
    verify_seed: int = 0
    sense: str = field(init=False)

    def __post_init__(self):
        n = self.c.n
        if self.sigma.n != n or (self.eta is not None and self.eta.n != n):
            raise ValueError("c, sigma and eta must share one dimension")
        if self.condition not in CONDITIONS:
            raise ValueError(f"condition must be one of {CONDITIONS}")
        if self.critical_point is not None:
            xc = np.asarray(self.critical_point, dtype=float).ravel()
            if xc.size != n:
                raise ValueError("critical_point has the wrong dimension")
            object.__setattr__(self, "critical_point", xc)
        if self.critical_tol <= 0:
            raise ValueError("critical_tol must be positive")
        object.__setattr__(self, "sense", self._sign_of_c())
        self._verify_condition()

    # -- structure -----------------------------------------------------------
    @property
    def n(self) -> int:
        return self.c.n

    @property
    def is_bolza(self) -> bool:
        return self.eta is not None

    @property
    def sphere_dim(self) -> int:
        """Ambient dimension of the sphere of initial adjoints."""
        return self.n + 1 if self.is_bolza else self.n

    @property
    def freezes(self) -> bool:
        return self.is_bolza and self.condition == CRITICAL

    @property
    def eta_critical(self) -> float:
        return float(self.eta(self.critical_point)) if self.freezes else 0.0

    def _sign_of_c(self) -> str:
        bounds = self.c.sign_bounds()
        if bounds is not None:
            lo, hi = bounds
            if hi < 0:
                return MIN
            if lo > 0:
                return MAX
            raise ValueError("c must be strictly sign-definite")
        vals = [self.c(x) for x in _sample_points(self.n, self.verify_samples, self.verify_radius, self.verify_seed)]
        vals = np.asarray(vals)
        if np.all(vals < 0):
            return MIN
        if np.all(vals > 0):
            return MAX
        raise ValueError("c must be strictly sign-definite (sampled values change sign)")

    def _verify_condition(self):
        f = self.eta if self.is_bolza else self.sigma
        pts = _sample_points(self.n, self.verify_samples, self.verify_radius, self.verify_seed + 1)
        if self.condition == NONVANISHING:
            for x in pts:
                if np.linalg.norm(f.grad(x)) <= GRAD_ZERO:
                    raise ValueError(f"declared nonvanishing gradient fails at {x}")
            return
        xc = self.critical_point
        if xc is None:
            if self.is_bolza:
                raise ValueError("the Bolza freeze rule needs critical_point")
            return
        if np.linalg.norm(f.grad(xc)) > 1e-8:
            raise ValueError("critical_point is not a critical point")
        # Mayer: critical points of sigma are maxima for c<0, minima for c>0.
        # Bolza: critical points of eta minimise eta and sigma for c<0, and
        # maximise both for c>0.
        if self.is_bolza:
            s = 1.0 if self.sense == MIN else -1.0
            checks = [self.eta, self.sigma]
        else:
            s = -1.0 if self.sense == MIN else 1.0
            checks = [self.sigma]
        pts = np.vstack([pts, xc + 0.1 * pts / self.verify_radius])
        for g in checks:
            ref = g(xc)
            for x in pts:
                if s * (g(x) - ref) < -1e-12 * max(1.0, abs(ref)):
                    raise ValueError(f"declared critical-point condition fails at {x}")

    def packed(self):
        """Buffers for the compiled kernels, or ``None`` for callbacks."""
        cb, sb = self.c.pack(), self.sigma.pack()
        eb = self.eta.pack() if self.is_bolza else np.zeros(K.HEADER + self.n + self.n * self.n)
        if cb is None or sb is None or eb is None:
            return None
        if not self.is_bolza:
            eb[1] = self.n
        return cb, sb, eb


@dataclass(frozen=True, eq=False)
class SmoothHamiltonianProblem:
    """Hamiltonian ``H(t, x, p)`` with gradient callbacks.

    ``sense="max"`` for Hamiltonians convex in ``p``; ``"min"`` for concave
    ones. ``homogeneous`` declares that ``H = <p, DpH> + eta(t, x)`` and that
    the adjoint dynamics are positively homogeneous, which permits the
    search over the unit sphere and the origin.
    """

    H: Callable[[float, np.ndarray, np.ndarray], float]
    DxH: Callable[[float, np.ndarray, np.ndarray], np.ndarray]
    DpH: Callable[[float, np.ndarray, np.ndarray], np.ndarray]
    sigma: ScalarField
    T: float
    sense: str = MAX
    homogeneous: bool = False
    verify_samples: int = 100
    verify_seed: int = 0

    def __post_init__(self):
        if self.sense not in (MIN, MAX):
            raise ValueError("sense must be 'min' or 'max'")
        if self.homogeneous:
            rng = np.random.default_rng(self.verify_seed)
            for _ in range(self.verify_samples):
                t = rng.uniform(0.0, self.T)
                x = rng.uniform(-3, 3, self.n)
                p = rng.normal(size=self.n)
                a = rng.uniform(0.1, 10.0)
                d1 = np.asarray(self.DpH(t, x, p), dtype=float)
                d2 = np.asarray(self.DpH(t, x, a * p), dtype=float)
                if np.max(np.abs(d1 - d2)) > 1e-10:
                    raise ValueError("declared homogeneity fails: DpH depends on the adjoint scale")

    @property
    def n(self) -> int:
        return self.sigma.n


# --------------------------------------------------------------------------
# characteristic systems


@dataclass
class CharState:
    """Point of a characteristic: state, adjoint, accumulated functional
    and, for the Bolza transform, the running-cost state and its constant
    adjoint."""

    x: np.ndarray
    p: np.ndarray
    z: float = 0.0
    xtilde: Optional[float] = None
    ptilde: Optional[float] = None


def _control(p):
    pn = float(np.linalg.norm(p))
    return p / pn if pn > K.P_ZERO else np.zeros_like(p), pn


def characteristic_rhs(kind: str, problem, t: float, s: CharState) -> CharState:
    """Time derivative of a characteristic state.

    ``kind`` is ``"eikonal"``, ``"bolza"`` or ``"smooth"``.
    """
    x = np.asarray(s.x, dtype=float)
    p = np.asarray(s.p, dtype=float)
    if kind in ("eikonal", "bolza"):
        c, dc = problem.c.eval_grad(x)
        u, pn = _control(p)
        dx = c * u
        dp = -dc * pn
        out = CharState(dx, dp, 0.0)
        if kind == "bolza":
            if s.ptilde is None:
                raise ValueError("bolza characteristics need ptilde")
            e, de = problem.eta.eval_grad(x)
            out.p = dp - s.ptilde * de
            out.xtilde = e
            out.ptilde = 0.0
    elif kind == "smooth":
        dph = np.asarray(problem.DpH(t, x, p), dtype=float)
        dxh = np.asarray(problem.DxH(t, x, p), dtype=float)
        out = CharState(dph, -dxh, float(p @ dph) - float(problem.H(t, x, p)))
    else:
        raise ValueError(f"unknown characteristic kind {kind!r}")
    vals = np.concatenate([out.x, out.p, [out.z, out.xtilde or 0.0]])
    if not np.all(np.isfinite(vals)):
        raise IntegrationError("non-finite field values")
    return out


def _flat_rhs(problem, ptil):
    """Right-hand side on the flat layout ``[x, running cost, p]``."""
    n = problem.n
    bolza = problem.is_bolza

    def rhs(t, y):
        kind = "bolza" if bolza else "eikonal"
        d = characteristic_rhs(kind, problem, t, CharState(y[:n], y[n + 1 :], ptilde=ptil))
        out = np.empty_like(y)
        out[:n] = d.x
        out[n] = d.xtilde if bolza else 0.0
        out[n + 1 :] = d.p
        return out

    return rhs


# --------------------------------------------------------------------------
# search specifications and results


@dataclass(frozen=True)
class SphereGridSearch:
    """Tensor grid over the sphere angles (``counts`` per angle)."""

    counts: Union[int, tuple] = 1000

    def angles(self, m: int) -> np.ndarray:
        counts = self.counts
        if np.isscalar(counts):
            counts = (int(counts),) + (max(1, int(counts) // 2),) * (m - 2)
        return sphere_grid(m, counts)


@dataclass(frozen=True)
class PowellSearch:
    """Powell's method from ``restarts`` random angle tuples.

    ``tol`` is the fractional-decrease tolerance of a full sweep and
    ``line_tol`` the relative tolerance of each Brent line search.
    """

    restarts: int = 5
    tol: float = 1e-7
    seed: RngSeed = RngSeed()
    line_tol: float = 1e-4
    maxiter: int = 200

    def starts(self, m: int, rng: Optional[np.random.Generator] = None) -> np.ndarray:
        rng = rng if rng is not None else self.seed.generator()
        return random_angles(rng, m, self.restarts)


@dataclass
class ValueResult:
    value: float
    p0_opt: np.ndarray
    control_at_t0: np.ndarray
    trajectory: Optional[Trajectory] = None
    stop_time: Optional[float] = None
    scan_time: Optional[float] = None
    stationary: bool = False
    converged: bool = True
    evaluations: int = 0
    x0: Optional[np.ndarray] = None
    t0: float = 0.0


@dataclass
class _Shot:
    J: float
    scan: float
    align: float
    gradnorm: float
    stop_time: Optional[float]
    scan_time: float
    pmin: float
    ok: bool
    gap_min: float = math.inf


# --------------------------------------------------------------------------
# shooting back-ends


class _KernelShooter:
    def __init__(self, problem: EikonalProblem, t0, x0, tol: ToleranceSpec, mode: str):
        self.problem = problem
        self.bufs = problem.packed()
        self.x0 = np.ascontiguousarray(x0, dtype=float)
        self.t0 = float(t0)
        self.tol = tol
        self.scan_sign = 0
        if mode == "scan_T":
            self.scan_sign = -1 if problem.sense == MIN else 1
        self.stop_on = problem.freezes
        self.stop_sign = 1.0 if problem.sense == MIN else -1.0
        self.eta_crit = problem.eta_critical
        self.which = K.OUT_SCAN if mode == "scan_T" else K.OUT_J
        self.size = K.out_size(problem.n)

    def _common(self):
        tol = self.tol
        return (self.x0, self.t0, float(self.problem.T), tol.abs_tol, tol.rel_tol, tol.initial_step,
                int(tol.max_steps), self.scan_sign, self.stop_on, self.stop_sign, self.eta_crit,
                float(self.problem.critical_tol))

    def batch(self, V: np.ndarray) -> list:
        n = self.problem.n
        V = np.ascontiguousarray(V, dtype=float)
        P = np.ascontiguousarray(V[:, :n])
        ptils = np.ascontiguousarray(V[:, n]) if self.problem.is_bolza else np.zeros(V.shape[0])
        outs = np.zeros((V.shape[0], self.size))
        cb, sb, eb = self.bufs
        (x0, t0, T, atol, rtol, h0, ms, ss, so, sg, ec, ct) = self._common()
        K.shoot_batch(cb, sb, eb, self.problem.is_bolza, ptils, x0, P, t0, T, atol, rtol, h0, ms,
                      ss, so, sg, ec, ct, outs)
        return [self._record(o) for o in outs]

    def _record(self, o) -> _Shot:
        ok = o[K.OUT_STATUS] == K.STATUS_OK
        stop = o[K.OUT_STOP]
        return _Shot(
            J=float(o[K.OUT_J]) if ok else math.nan,
            scan=float(o[K.OUT_SCAN]) if ok else math.nan,
            align=float(o[K.OUT_ALIGN]) if ok else math.nan,
            gradnorm=float(o[K.OUT_GRADNORM]) if ok else math.nan,
            stop_time=None if not ok or math.isnan(stop) else float(stop),
            scan_time=float(o[K.OUT_SCAN_T]),
            pmin=float(o[K.OUT_PMIN]),
            ok=bool(ok),
            gap_min=float(o[K.OUT_GAPMIN]) if ok else math.nan,
        )

    def powell(self, search: PowellSearch, sign: float, rng=None, starts=None, aim=False):
        m = self.problem.sphere_dim
        if starts is None:
            starts = search.starts(m, rng)
        starts = np.ascontiguousarray(np.atleast_2d(starts), dtype=float)
        work = np.zeros(self.size)
        cb, sb, eb = self.bufs
        (x0, t0, T, atol, rtol, h0, ms, ss, so, sg, ec, ct) = self._common()
        which = K.OUT_GAPMIN if aim else self.which
        args = (cb, sb, eb, self.problem.is_bolza, x0, t0, T, atol, rtol, h0, ms, ss, so, sg, ec, ct,
                1.0 if aim else float(sign), int(which), self.problem.is_bolza, work)
        theta, _, converged, nfev = K.powell_angles(args, starts, float(search.tol), float(search.line_tol),
                                                    int(search.maxiter))
        return np.asarray(theta), bool(converged), int(nfev)


class _PythonShooter:
    """Same contract as :class:`_KernelShooter` for arbitrary callback fields."""

    def __init__(self, problem: EikonalProblem, t0, x0, tol: ToleranceSpec, mode: str):
        self.problem = problem
        self.x0 = np.asarray(x0, dtype=float)
        self.t0 = float(t0)
        self.tol = tol
        self.mode = mode
        self.which = "scan" if mode == "scan_T" else "J"

    def trajectory(self, v):
        pr = self.problem
        n = pr.n
        ptil = float(v[n]) if pr.is_bolza else 0.0
        y0 = np.concatenate([self.x0, [0.0], v[:n]])
        rhs = _flat_rhs(pr, ptil)
        if pr.freezes:
            s = 1.0 if pr.sense == MIN else -1.0
            ec = pr.eta_critical

            def stop(y):
                return s * (pr.eta(y[:n]) - ec) < pr.critical_tol

            def probe(step):
                t_in, g_in = self._dip(step)
                return t_in if g_in < pr.critical_tol else None

            if stop(y0):
                return Trajectory([self.t0], [y0]), self.t0
            return integrate_with_stop(rhs, stop, self.t0, pr.T, y0, self.tol, probe)
        return integrate_adaptive(rhs, self.t0, pr.T, y0, self.tol), None

    def shoot(self, v) -> _Shot:
        pr = self.problem
        n = pr.n
        try:
            traj, t_stop = self.trajectory(np.asarray(v, dtype=float))
        except IntegrationError:
            return _Shot(math.nan, math.nan, math.nan, math.nan, None, math.nan, math.nan, False)
        y = traj.y_final
        sig, gs = pr.sigma.eval_grad(y[:n])
        J = sig + y[n]
        if t_stop is not None:
            J += pr.eta_critical * (pr.T - t_stop)
        p = y[n + 1 :]
        pn = float(np.linalg.norm(p))
        align = float(p @ gs) / pn if pn > K.P_ZERO else math.nan
        pmin = float(np.min(np.linalg.norm(traj.states[:, n + 1 :], axis=1)))
        scan, scan_t = self._scan(traj) if self.mode == "scan_T" else (sig, pr.T)
        gap = self._gap_min(traj) if pr.freezes else math.inf
        return _Shot(J, scan, align, float(np.linalg.norm(gs)), t_stop, scan_t, pmin, True, gap)

    def _dip(self, step):
        """Interior minimum ``(t, gap)`` of the critical-level gap over one
        step when its time derivative changes sign there, else ``(None, inf)``."""
        pr = self.problem
        n = pr.n
        s = 1.0 if pr.sense == MIN else -1.0
        d0 = s * float(pr.eta.grad(step.states[0][:n]) @ step.slopes[0][:n])
        d1 = s * float(pr.eta.grad(step.states[1][:n]) @ step.slopes[1][:n])
        if not (d0 < 0.0 < d1):
            return None, math.inf
        a, b = step.times[0], step.times[1]
        ec = pr.eta_critical
        t_in, v = golden_section_max(lambda t: -s * (pr.eta(step(t)[:n]) - ec), a, b, xtol=1e-12 * (b - a))
        return t_in, -v

    def _gap_min(self, traj):
        """Closest approach of ``eta`` to its critical level along ``traj``."""
        pr = self.problem
        n = pr.n
        s = 1.0 if pr.sense == MIN else -1.0
        ec = pr.eta_critical
        best = min(s * (pr.eta(y[:n]) - ec) for y in traj.states)
        if traj.slopes is None:
            return best
        for i in range(len(traj) - 1):
            step = Trajectory(traj.times[i : i + 2], traj.states[i : i + 2], traj.slopes[i : i + 2])
            best = min(best, self._dip(step)[1])
        return best

    def _scan(self, traj):
        pr = self.problem
        n = pr.n
        s = -1.0 if pr.sense == MIN else 1.0
        best_t = traj.times[0]
        best = s * pr.sigma(traj.states[0][:n])
        for i in range(len(traj) - 1):
            a, b = traj.times[i], traj.times[i + 1]
            tg, vg = golden_section_max(lambda t: s * pr.sigma(traj(t)[:n]), a, b, xtol=1e-9 * (b - a))
            ve = s * pr.sigma(traj.states[i + 1][:n])
            for tt, vv in ((tg, vg), (b, ve)):
                if vv > best:
                    best, best_t = vv, tt
        return s * best, best_t

    def batch(self, V) -> list:
        return [self.shoot(v) for v in np.asarray(V, dtype=float)]

    def powell(self, search: PowellSearch, sign: float, rng=None, starts=None, aim=False):
        m = self.problem.sphere_dim
        if starts is None:
            starts = search.starts(m, rng)
        starts = np.atleast_2d(starts)

        def f(theta):
            r = self.shoot(sphere_embed(theta))
            if aim:
                return r.gap_min if r.ok else K.FAIL_VALUE
            val = r.scan if self.which == "scan" else r.J
            return sign * val if r.ok else K.FAIL_VALUE

        res = minimize_powell(f, starts[0], search.tol, list(starts[1:]), search.maxiter, search.line_tol)
        return res.x, res.converged, res.nfev


def _shooter(problem, t0, x0, tol, mode, backend):
    if backend not in ("auto", "kernel", "python"):
        raise ValueError("backend must be 'auto', 'kernel' or 'python'")
    if backend == "python" or (backend == "auto" and problem.packed() is None):
        return _PythonShooter(problem, t0, x0, tol, mode)
    if problem.packed() is None:
        raise ValueError("callback fields cannot run on the compiled kernels")
    return _KernelShooter(problem, t0, x0, tol, mode)


# --------------------------------------------------------------------------
# eikonal / Bolza values


def _check_position(problem, t0, x0):
    x0 = np.asarray(x0, dtype=float).ravel()
    if x0.size != problem.n:
        raise ValueError(f"x0 must have dimension {problem.n}")
    if t0 > problem.T:
        raise ValueError(EMPTY_HORIZON)
    return x0


def _terminal_result(problem, t0, x0, with_trajectory):
    m = problem.sphere_dim
    value = problem.sigma(x0)
    traj = None
    if with_trajectory:
        y = np.concatenate([x0, [0.0], np.zeros(problem.n)])
        traj = Trajectory([t0], [y])
    return ValueResult(value, np.zeros(m), np.zeros(problem.n), traj, None, t0, True, True, 0, x0, t0)


def _sphere_candidates(m, search):
    if m == 1:
        return np.array([[1.0], [-1.0]])
    return np.array([sphere_embed(th) for th in search.angles(m)])


def _funnel(shooter, search, sign, theta):
    """Aim from ``theta`` at the freezing characteristics (minimise the
    closest approach to the critical level), then optimise the cost from
    there. Returns ``((v, shot, converged) or None, evaluations)``."""
    th_aim, _, nfev = shooter.powell(search, sign, starts=theta, aim=True)
    aimed = shooter.batch(sphere_embed(th_aim)[None, :])[0]
    nfev += 1
    if not (aimed.ok and aimed.stop_time is not None):
        return None, nfev
    th_in, conv_in, n_in = shooter.powell(search, sign, starts=th_aim)
    v_in = sphere_embed(th_in)
    inside = shooter.batch(v_in[None, :])[0]
    nfev += n_in + 1
    if not (inside.ok and sign * inside.J <= sign * aimed.J):
        return (sphere_embed(th_aim), aimed, True), nfev
    return (v_in, inside, conv_in), nfev


def _optimise(problem, shooter, search, sign, warm_start=None):
    """Best sphere vector, its shot record, convergence flag and evaluation count.

    ``warm_start`` (a sphere vector) is an extra Powell start placed ahead
    of the random ones; sphere-grid searches ignore it.
    """
    m = problem.sphere_dim
    if isinstance(search, SphereGridSearch) or m == 1:
        V = _sphere_candidates(m, search if isinstance(search, SphereGridSearch) else SphereGridSearch(1))
        shots = shooter.batch(V)
        key = "scan" if shooter.which in ("scan", K.OUT_SCAN) else "J"
        vals = np.array([getattr(s, key) if s.ok else math.nan for s in shots])
        if np.all(np.isnan(vals)):
            raise IntegrationError("every characteristic failed to integrate")
        scored = np.where(np.isnan(vals), np.inf, sign * vals)
        i = int(np.argmin(scored))  # lowest index wins ties
        return V[i], shots[i], True, len(V)
    if isinstance(search, PowellSearch):
        starts = search.starts(m)
        if warm_start is not None:
            starts = np.vstack([sphere_angles(warm_start), starts])
        theta, converged, nfev = shooter.powell(search, sign, starts=starts)
        v = sphere_embed(theta)
        shot = shooter.batch(v[None, :])[0]
        nfev += 1
        if not shot.ok:
            raise IntegrationError("optimal characteristic failed to integrate")
        if problem.freezes:
            # The characteristics that reach the critical point form a thin
            # funnel that random restarts rarely hit, and the optimum sits on
            # its edge. Aim at it from near misses (the Powell result and the
            # warm start), then polish the cost inside it.
            misses = [theta] if shot.stop_time is None else []
            if warm_start is not None:
                warm = shooter.batch(np.asarray(warm_start, dtype=float)[None, :])[0]
                nfev += 1
                if warm.ok and warm.stop_time is None:
                    misses.append(sphere_angles(warm_start))
            for th in misses:
                found, n_f = _funnel(shooter, search, sign, th)
                nfev += n_f
                if found is not None and sign * found[1].J < sign * shot.J:
                    v, shot, converged = found
        return v, shot, converged, nfev
    raise TypeError("search must be SphereGridSearch or PowellSearch")


def _solve_eikonal(problem, t0, x0, search, mode, tol, with_trajectory, backend, stationary_allowed,
                   warm_start=None):
    shooter = _shooter(problem, t0, x0, tol, mode, backend)
    sign = 1.0 if problem.sense == MIN else -1.0
    v, shot, converged, nfev = _optimise(problem, shooter, search, sign, warm_start)
    value = shot.scan if mode == "scan_T" else shot.J
    n = problem.n
    stationary = False
    if stationary_allowed:
        still = problem.sigma(x0)
        if problem.is_bolza:
            still += problem.eta(x0) * (problem.T - t0)
        if sign * still < sign * value:
            stationary = True
            value = still
    frozen_at_start = shot.stop_time is not None and shot.stop_time <= t0
    if stationary or frozen_at_start:
        control = np.zeros(n)
    else:
        control, _ = _control(v[:n])
    traj = None
    if with_trajectory:
        if stationary:
            traj = Trajectory([t0], [np.concatenate([x0, [0.0], np.zeros(n)])])
        else:
            traj, _ = _PythonShooter(problem, t0, x0, tol, mode).trajectory(v)
    return ValueResult(
        value=float(value),
        p0_opt=np.zeros_like(v) if stationary else v,
        control_at_t0=control,
        trajectory=traj,
        stop_time=None if stationary else shot.stop_time,
        scan_time=shot.scan_time if mode == "scan_T" and not stationary else None,
        stationary=stationary,
        converged=converged,
        evaluations=nfev,
        x0=x0,
        t0=float(t0),
    )


def value_eikonal(
    problem: EikonalProblem,
    t0: float,
    x0,
    search=SphereGridSearch(1000),
    mode: str = "terminal",
    tol: ToleranceSpec = ToleranceSpec(),
    with_trajectory: bool = True,
    backend: str = "auto",
    warm_start=None,
) -> ValueResult:
    """Value of the Mayer eikonal problem at ``(t0, x0)``.

    ``mode="terminal"`` optimises ``sigma(x*(T))`` over unit initial
    adjoints (plus the stationary candidate when the critical-point
    condition is declared); ``mode="scan_T"`` optimises the inner optimum
    of ``sigma(x*(t))`` over ``t`` in ``[t0, T]`` along each characteristic.
    """
    if problem.is_bolza:
        raise ValueError("use value_bolza_eikonal for problems with a running cost")
    if mode not in ("terminal", "scan_T"):
        raise ValueError("mode must be 'terminal' or 'scan_T'")
    x0 = _check_position(problem, t0, x0)
    if t0 == problem.T:
        return _terminal_result(problem, t0, x0, with_trajectory)
    stationary = mode == "terminal" and problem.condition == CRITICAL
    return _solve_eikonal(problem, t0, x0, search, mode, tol, with_trajectory, backend, stationary, warm_start)


def value_bolza_eikonal(
    problem: EikonalProblem,
    t0: float,
    x0,
    search=PowellSearch(tol=1e-5),
    tol: ToleranceSpec = ToleranceSpec(),
    with_trajectory: bool = True,
    backend: str = "auto",
    warm_start=None,
) -> ValueResult:
    """Value of the eikonal problem with running cost ``eta``.

    The search runs over unit vectors ``(p0, ptilde)`` in ``R^(n+1)``. With
    the critical-point condition declared, characteristics freeze once
    ``eta`` comes within ``critical_tol`` of ``eta(x')`` and the remaining
    running cost is added as ``eta(x') (T - t')``.
    """
    if not problem.is_bolza:
        raise ValueError("problem has no running cost; use value_eikonal")
    x0 = _check_position(problem, t0, x0)
    if t0 == problem.T:
        return _terminal_result(problem, t0, x0, with_trajectory)
    stationary = problem.condition == CRITICAL
    return _solve_eikonal(problem, t0, x0, search, "terminal", tol, with_trajectory, backend, stationary,
                          warm_start)


def feedback_control(problem, t0: float, x0, search=None, **kwargs) -> np.ndarray:
    """Optimal control at ``(t0, x0)`` read off the optimal characteristic."""
    if isinstance(problem, SmoothHamiltonianProblem):
        res = value_smooth_hopf_lax(problem, t0, x0, search, **kwargs)
        return res.control_at_t0
    kwargs.setdefault("with_trajectory", False)
    if problem.is_bolza:
        x0 = _check_position(problem, t0, x0)
        if problem.freezes:
            s = 1.0 if problem.sense == MIN else -1.0
            if s * (problem.eta(x0) - problem.eta_critical) < problem.critical_tol:
                return np.zeros(problem.n)
        res = value_bolza_eikonal(problem, t0, x0, search or PowellSearch(tol=1e-5), **kwargs)
    else:
        res = value_eikonal(problem, t0, x0, search or SphereGridSearch(1000), **kwargs)
    return res.control_at_t0


def carry_adjoint(problem: EikonalProblem, t0: float, x0, v, t1: float,
                  tol: ToleranceSpec = ToleranceSpec()) -> Optional[np.ndarray]:
    """Sphere vector of the characteristic started at ``(t0, x0)`` with
    sphere vector ``v``, read off at the later time ``t1``.

    Returns ``None`` when the characteristic freezes or fails before ``t1``.
    """
    v = np.asarray(v, dtype=float)
    n = problem.n
    try:
        traj, _ = _PythonShooter(problem, t0, _check_position(problem, t0, x0), tol, "terminal").trajectory(v)
    except IntegrationError:
        return None
    if t1 > traj.t_final:
        return None
    p = traj(t1)[n + 1 :]
    w = np.concatenate([p, v[n:]])
    wn = float(np.linalg.norm(w))
    return w / wn if wn > 0 else None


def value_bvp_align(
    problem: EikonalProblem,
    t0: float,
    x0,
    search: SphereGridSearch = SphereGridSearch(1000),
    tol: ToleranceSpec = ToleranceSpec(),
    backend: str = "auto",
) -> ValueResult:
    """Boundary-value heuristic: among sphere-grid characteristics, take the
    one whose terminal adjoint is best aligned with ``D sigma(x*(T))`` and
    report ``sigma(x*(T))`` along it."""
    if problem.is_bolza:
        raise ValueError("the alignment comparator handles the Mayer case only")
    x0 = _check_position(problem, t0, x0)
    if t0 == problem.T:
        return _terminal_result(problem, t0, x0, False)
    shooter = _shooter(problem, t0, x0, tol, "terminal", backend)
    V = _sphere_candidates(problem.n, search)
    shots = shooter.batch(V)
    usable = [s.ok and s.gradnorm > GRAD_ZERO and math.isfinite(s.align) for s in shots]
    if not any(usable):
        raise ValueError(DEGENERATE_ALIGNMENT)
    scores = np.array([s.align if u else -np.inf for s, u in zip(shots, usable)])
    i = int(np.argmax(scores))
    control, _ = _control(V[i])
    return ValueResult(float(shots[i].J), V[i], control, None, None, None, False, True, len(V), x0, float(t0))


# --------------------------------------------------------------------------
# smooth Hamiltonians


def _smooth_shot(problem, t0, x0, p0, tol):
    n = problem.n

    def rhs(t, y):
        d = characteristic_rhs("smooth", problem, t, CharState(y[:n], y[n : 2 * n], y[2 * n]))
        return np.concatenate([d.x, d.p, [d.z]])

    traj = integrate_adaptive(rhs, t0, problem.T, np.concatenate([x0, p0, [0.0]]), tol)
    y = traj.y_final
    return problem.sigma(y[:n]) - y[2 * n], traj


def value_smooth_hopf_lax(
    problem: SmoothHamiltonianProblem,
    t0: float,
    x0,
    search=None,
    starts: Optional[Sequence] = None,
    tol: ToleranceSpec = ToleranceSpec(),
    with_trajectory: bool = True,
    powell_tol: float = 1e-8,
) -> ValueResult:
    """Value for a smooth Hamiltonian at ``(t0, x0)``.

    Optimises ``sigma(x(T)) - int (<p, DpH> - H) dt`` over initial adjoints.
    With ``search`` given (sphere grid or Powell over angles) the search runs
    over the unit sphere plus the origin, which requires the homogeneity
    declaration. Otherwise Powell runs over ``R^n`` from the caller's
    ``starts``; no global optimality is guaranteed in that case.
    """
    x0 = np.asarray(x0, dtype=float).ravel()
    n = problem.n
    if x0.size != n:
        raise ValueError(f"x0 must have dimension {n}")
    if t0 > problem.T:
        raise ValueError(EMPTY_HORIZON)
    if t0 == problem.T:
        traj = Trajectory([t0], [np.concatenate([x0, np.zeros(n), [0.0]])]) if with_trajectory else None
        return ValueResult(problem.sigma(x0), np.zeros(n), np.zeros(n), traj, x0=x0, t0=t0)
    sign = -1.0 if problem.sense == MAX else 1.0

    def objective(p0):
        try:
            val, _ = _smooth_shot(problem, t0, x0, np.asarray(p0, dtype=float), tol)
        except IntegrationError:
            return K.FAIL_VALUE
        return sign * val

    evaluations = 0
    converged = True
    if search is not None:
        if not problem.homogeneous:
            raise ValueError("sphere search needs the homogeneity declaration")
        cands = [np.zeros(n)]
        if isinstance(search, SphereGridSearch):
            cands += list(_sphere_candidates(n, search))
        elif isinstance(search, PowellSearch):
            if n == 1:
                cands += [np.array([1.0]), np.array([-1.0])]
            else:
                st = search.starts(n)
                res = minimize_powell(lambda th: objective(sphere_embed(th)), st[0], search.tol, list(st[1:]),
                                      search.maxiter, search.line_tol)
                cands.append(sphere_embed(res.x))
                evaluations += res.nfev
                converged = res.converged
        else:
            raise TypeError("search must be SphereGridSearch or PowellSearch")
        scores = np.array([objective(p) for p in cands])
        evaluations += len(cands)
        i = int(np.argmin(scores))
        p_best = cands[i]
    else:
        if not starts:
            raise ValueError("unbounded adjoint search needs caller-supplied starts")
        starts = [np.atleast_1d(np.asarray(s, dtype=float)) for s in starts]
        res = minimize_powell(objective, starts[0], powell_tol, starts[1:])
        p_best, evaluations, converged = res.x, res.nfev, res.converged
    value, traj = _smooth_shot(problem, t0, x0, p_best, tol)
    control, _ = _control(p_best)
    return ValueResult(float(value), p_best, control, traj if with_trajectory else None, None, None,
                       bool(np.all(p_best == 0)), converged, evaluations, x0, float(t0))


# --------------------------------------------------------------------------
# value tables


@dataclass
class ValueTable:
    t0: float
    n: int
    m: int
    points: np.ndarray
    results: list
    failed: list

    @property
    def values(self) -> np.ndarray:
        return np.array([r.value if r is not None else math.nan for r in self.results])

    def rows(self):
        for x, r in zip(self.points, self.results):
            if r is None:
                yield [self.t0, *x, math.nan, *([math.nan] * self.n), *([math.nan] * self.m), math.nan]
            else:
                stop = r.stop_time if r.stop_time is not None else math.nan
                yield [self.t0, *x, r.value, *r.control_at_t0, *r.p0_opt, stop]


def _axis(lo, hi, step):
    if step <= 0:
        raise ValueError("grid steps must be positive")
    count = int(math.floor((hi - lo) / step + 1e-9)) + 1
    return lo + step * np.arange(count)


def grid_points(rectangle, tail=()) -> np.ndarray:
    """Nodes of a rectangle given as per-axis ``(lo, hi, step)``; the first
    axis varies slowest. ``tail`` fixes the remaining coordinates."""
    axes = [_axis(*a) for a in rectangle]
    mesh = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([g.ravel() for g in mesh], axis=1)
    if len(tail):
        pts = np.hstack([pts, np.tile(np.asarray(tail, dtype=float), (pts.shape[0], 1))])
    return pts


def eval_value_grid(
    problem,
    t0: float,
    rectangle,
    tail=(),
    evaluator: Optional[Callable] = None,
    threads: int = 1,
) -> ValueTable:
    """Evaluate ``evaluator(problem, t0, x)`` on every node of a rectangle.

    Nodes are processed in index order (a thread pool only changes the
    wall-clock time); a node whose evaluation raises is recorded as failed.
    """
    if evaluator is None:
        evaluator = value_bolza_eikonal if getattr(problem, "is_bolza", False) else value_eikonal
    pts = grid_points(rectangle, tail)
    if pts.shape[1] != problem.n:
        raise ValueError("rectangle plus tail must match the problem dimension")

    def one(x):
        try:
            r = evaluator(problem, t0, x)
            r.trajectory = None
            return r
        except (IntegrationError, ValueError, ArithmeticError):
            return None

    if threads > 1:
        with ThreadPoolExecutor(threads) as ex:
            results = list(ex.map(one, pts))
    else:
        results = [one(x) for x in pts]
    failed = [i for i, r in enumerate(results) if r is None]
    m = getattr(problem, "sphere_dim", problem.n)
    return ValueTable(float(t0), problem.n, m, pts, results, failed)


def fmt(v: float) -> str:
    return f"{float(v):.9g}"


def write_value_csv(table: ValueTable, dest=None) -> str:
    """CSV with header ``t,x1..xn,value,u1..un,p0_1..p0_m,stop_time``.

    Returns the text; writes it to ``dest`` (path or stream) when given.
    """
    header = ["t", *[f"x{i + 1}" for i in range(table.n)], "value", *[f"u{i + 1}" for i in range(table.n)],
              *[f"p0_{i + 1}" for i in range(table.m)], "stop_time"]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in table.rows():
        w.writerow([fmt(v) for v in row])
    text = buf.getvalue()
    if dest is not None:
        if hasattr(dest, "write"):
            dest.write(text)
        else:
            with open(dest, "w", newline="") as fh:
                fh.write(text)
    return text
