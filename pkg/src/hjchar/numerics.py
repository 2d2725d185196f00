"""Numerical kernels: adaptive Runge-Kutta integration, Euler-Maruyama,
composite Simpson quadrature, 1-D maximisation and Powell's method.

The Powell minimiser is written once and built twice: as plain Python
(used with arbitrary callables) and as a numba-compiled twin (used by the
characteristic kernels in :mod:`hjchar._kernels`).
"""

from __future__ import annotations

import math
import types
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

__all__ = [
    "IntegrationError",
    "ToleranceSpec",
    "RngSeed",
    "Trajectory",
    "PowellResult",
    "integrate_adaptive",
    "integrate_with_stop",
    "integrate_sde_em",
    "quad_simpson",
    "golden_section_max",
    "grid_maximize_1d",
    "minimize_powell",
]

BUDGET_EXHAUSTED = "integration budget exhausted"
DYNAMICS_FAILED = "dynamics evaluation failed"

# step-size controller constants
SAFETY = 0.9
MAX_GROWTH = 5.0
MAX_SHRINK = 0.1
STOP_TIME_RESOLUTION = 1e-10


class IntegrationError(RuntimeError):
    """Raised when an ODE/SDE integration cannot be completed."""


@dataclass(frozen=True)
class ToleranceSpec:
    abs_tol: float = 1e-5
    rel_tol: float = 1e-5
    initial_step: float = 1e-3
    max_steps: int = 100_000

    def __post_init__(self):
        if not (self.abs_tol > 0 and self.rel_tol > 0 and self.initial_step > 0):
            raise ValueError("tolerances and initial step must be positive")
        if self.max_steps < 1:
            raise ValueError("max_steps must be a positive integer")


@dataclass(frozen=True)
class RngSeed:
    """Seed plus stream index; distinct streams are spawned children of one
    ``SeedSequence`` and therefore independent."""

    seed: int = 0
    stream: int = 0

    def generator(self) -> np.random.Generator:
        ss = np.random.SeedSequence(int(self.seed), spawn_key=(int(self.stream),))
        return np.random.Generator(np.random.PCG64(ss))


@dataclass
class Trajectory:
    """Accepted integration stamps with piecewise dense output.

    ``slopes`` holds the right-hand side at each stamp; when present the
    interpolant is the cubic Hermite polynomial of each step, otherwise it is
    piecewise linear (stochastic paths).
    """

    times: np.ndarray
    states: np.ndarray
    slopes: Optional[np.ndarray] = None

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.states = np.atleast_2d(np.asarray(self.states, dtype=float))
        if self.states.shape[0] != self.times.shape[0]:
            raise ValueError("one state per time stamp required")
        if self.times.size > 1 and np.any(np.diff(self.times) <= 0):
            raise ValueError("time stamps must be strictly increasing")

    def __len__(self):
        return self.times.size

    @property
    def t_final(self) -> float:
        return float(self.times[-1])

    @property
    def y_final(self) -> np.ndarray:
        return self.states[-1]

    def __call__(self, t: float) -> np.ndarray:
        times = self.times
        if t < times[0] or t > times[-1]:
            raise ValueError(f"t={t} outside [{times[0]}, {times[-1]}]")
        if times.size == 1:
            return self.states[0].copy()
        i = int(np.searchsorted(times, t, side="right")) - 1
        i = min(max(i, 0), times.size - 2)
        h = times[i + 1] - times[i]
        s = (t - times[i]) / h
        y0, y1 = self.states[i], self.states[i + 1]
        if self.slopes is None:
            return (1.0 - s) * y0 + s * y1
        f0, f1 = self.slopes[i], self.slopes[i + 1]
        s2 = s * s
        s3 = s2 * s
        h00 = 2 * s3 - 3 * s2 + 1
        h10 = s3 - 2 * s2 + s
        h01 = -2 * s3 + 3 * s2
        h11 = s3 - s2
        return h00 * y0 + h10 * h * f0 + h01 * y1 + h11 * h * f1


# Cash-Karp 5(4) tableau
CK_C = np.array([0.0, 1 / 5, 3 / 10, 3 / 5, 1.0, 7 / 8])
CK_A = np.array(
    [
        [0.0, 0.0, 0.0, 0.0, 0.0],
        [1 / 5, 0.0, 0.0, 0.0, 0.0],
        [3 / 40, 9 / 40, 0.0, 0.0, 0.0],
        [3 / 10, -9 / 10, 6 / 5, 0.0, 0.0],
        [-11 / 54, 5 / 2, -70 / 27, 35 / 27, 0.0],
        [1631 / 55296, 175 / 512, 575 / 13824, 44275 / 110592, 253 / 4096],
    ]
)
CK_B5 = np.array([37 / 378, 0.0, 250 / 621, 125 / 594, 0.0, 512 / 1771])
CK_B4 = np.array([2825 / 27648, 0.0, 18575 / 48384, 13525 / 55296, 277 / 14336, 1 / 4])
CK_E = CK_B5 - CK_B4


def _checked(rhs, t, y):
    dy = np.asarray(rhs(t, y), dtype=float)
    if not np.all(np.isfinite(dy)):
        raise IntegrationError(DYNAMICS_FAILED)
    return dy


def _ck_step(rhs, t, y, h, k1):
    k = np.empty((6, y.size))
    k[0] = k1
    for s in range(1, 6):
        ys = y + h * (CK_A[s, :s] @ k[:s])
        k[s] = _checked(rhs, t + CK_C[s] * h, ys)
    return y + h * (CK_B5 @ k), h * (CK_E @ k)


def _error_norm(err, y, y_new, tol):
    scale = tol.abs_tol + tol.rel_tol * np.maximum(np.abs(y), np.abs(y_new))
    return float(np.max(np.abs(err) / scale))


def _integrate(rhs, t0, t1, y0, tol, stop=None, probe=None):
    if not t0 < t1:
        raise ValueError("integration requires t0 < t1")
    y = np.array(y0, dtype=float, ndmin=1)
    f = _checked(rhs, t0, y)
    times, states, slopes = [t0], [y.copy()], [f]
    if stop is not None and stop(y):
        return Trajectory(times, states, slopes), t0

    t = t0
    h = min(tol.initial_step, t1 - t0)
    steps = 0
    while t < t1:
        if steps >= tol.max_steps:
            raise IntegrationError(BUDGET_EXHAUSTED)
        steps += 1
        last = t + h >= t1
        if last:
            h = t1 - t
        y_new, err = _ck_step(rhs, t, y, h, f)
        if not np.all(np.isfinite(y_new)):
            raise IntegrationError(DYNAMICS_FAILED)
        e = _error_norm(err, y, y_new, tol)
        if e > 1.0:
            h *= max(MAX_SHRINK, SAFETY * e ** -0.25)
            continue
        t_new = t1 if last else t + h
        f_new = _checked(rhs, t_new, y_new)
        times.append(t_new)
        states.append(y_new)
        slopes.append(f_new)
        if stop is not None:
            if stop(y_new):
                return _refine_stop(rhs, stop, times, states, slopes, t_new)
            if probe is not None:
                t_in = probe(Trajectory(times[-2:], states[-2:], slopes[-2:]))
                if t_in is not None:
                    return _refine_stop(rhs, stop, times, states, slopes, t_in)
        t, y, f = t_new, y_new, f_new
        h *= MAX_GROWTH if e == 0.0 else min(MAX_GROWTH, SAFETY * e ** -0.2)
    return Trajectory(times, states, slopes), None


def _refine_stop(rhs, stop, times, states, slopes, hi):
    # bisection on the last step's Hermite interpolant; stop(step(hi)) holds
    step = Trajectory(times[-2:], states[-2:], slopes[-2:])
    lo = times[-2]
    while hi - lo > STOP_TIME_RESOLUTION:
        mid = 0.5 * (lo + hi)
        if stop(step(mid)):
            hi = mid
        else:
            lo = mid
    if hi < times[-1]:
        y_hit = step(hi)
        times[-1], states[-1], slopes[-1] = hi, y_hit, _checked(rhs, hi, y_hit)
    return Trajectory(times, states, slopes), hi


def integrate_adaptive(
    rhs: Callable[[float, np.ndarray], np.ndarray],
    t0: float,
    t1: float,
    y0,
    tol: ToleranceSpec = ToleranceSpec(),
) -> Trajectory:
    """Integrate ``y' = rhs(t, y)`` on ``[t0, t1]`` with the Cash-Karp pair.

    The fifth-order solution is propagated; the embedded fourth-order one
    only drives step-size selection.
    """
    traj, _ = _integrate(rhs, t0, t1, y0, tol)
    return traj


def integrate_with_stop(
    rhs: Callable[[float, np.ndarray], np.ndarray],
    stop: Callable[[np.ndarray], bool],
    t0: float,
    t1: float,
    y0,
    tol: ToleranceSpec = ToleranceSpec(),
    probe: Optional[Callable[[Trajectory], Optional[float]]] = None,
) -> tuple[Trajectory, Optional[float]]:
    """Like :func:`integrate_adaptive` but halts once ``stop(y)`` holds.

    The predicate is checked at every accepted step end. ``probe``, if
    given, receives each accepted step (a two-stamp trajectory) whose end
    does not satisfy the predicate and may return an interior time at which
    it does, catching excursions that enter and leave within one step.
    Returns the (truncated) trajectory and the first time the predicate
    becomes true, located to 1e-10 by bisection on the dense output, or
    ``None`` if it never fires.
    """
    return _integrate(rhs, t0, t1, y0, tol, stop, probe)


def integrate_sde_em(
    drift: Callable[[float, np.ndarray], np.ndarray],
    noise_diag,
    dt: float,
    t0: float,
    t1: float,
    y0,
    seed: RngSeed = RngSeed(),
) -> Trajectory:
    """Euler-Maruyama with constant diagonal noise.

    ``y_{k+1} = y_k + drift(t_k, y_k) dt + diag(noise) sqrt(dt) xi_k``.
    All normals are drawn up front from the generator of ``seed``.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    y = np.array(y0, dtype=float, ndmin=1)
    lam = np.asarray(noise_diag, dtype=float)
    if lam.shape != y.shape:
        raise ValueError("noise_diag must match the state dimension")
    steps = int(round((t1 - t0) / dt))
    if steps < 1:
        raise ValueError("interval shorter than one step")
    dt_eff = (t1 - t0) / steps
    times = t0 + (t1 - t0) * np.arange(steps + 1) / steps
    xi = seed.generator().standard_normal((steps, y.size))
    kick = xi * (lam * math.sqrt(dt_eff))
    states = np.empty((steps + 1, y.size))
    states[0] = y
    for k in range(steps):
        a = _checked(drift, times[k], y)
        y = y + a * dt_eff + kick[k]
        states[k + 1] = y
    return Trajectory(times, states)


def quad_simpson(f: Callable[[float], float], a: float, b: float, n: int) -> float:
    """Composite Simpson rule with ``n`` (even) subintervals."""
    if n < 2 or n % 2:
        raise ValueError("n must be even and >= 2")
    if a == b:
        return 0.0
    x = np.linspace(a, b, n + 1)
    fx = np.array([f(xi) for xi in x], dtype=float)
    if not np.all(np.isfinite(fx)):
        raise ValueError("non-finite integrand")
    w = np.ones(n + 1)
    w[1:-1:2] = 4.0
    w[2:-1:2] = 2.0
    return float((b - a) / (3 * n) * (w @ fx))


INVPHI = (math.sqrt(5.0) - 1.0) / 2.0


def golden_section_max(f, a: float, b: float, xtol: float = 1e-12, maxiter: int = 200):
    """Maximise a unimodal ``f`` on ``[a, b]``; returns ``(x, f(x))``."""
    c = b - INVPHI * (b - a)
    d = a + INVPHI * (b - a)
    fc, fd = f(c), f(d)
    for _ in range(maxiter):
        if b - a <= xtol:
            break
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - INVPHI * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + INVPHI * (b - a)
            fd = f(d)
    return (c, fc) if fc >= fd else (d, fd)


def grid_maximize_1d(f, a: float, b: float, npts: int = 10_001, polish: bool = True):
    """Maximise ``f`` over a uniform grid on ``[a, b]`` (lowest index wins
    ties), then polish by golden section in the neighbouring cells."""
    if a == b:
        return a, f(a)
    xs = np.linspace(a, b, npts)
    vals = np.array([f(x) for x in xs])
    i = int(np.argmax(vals))
    x_best, f_best = xs[i], vals[i]
    if polish:
        lo, hi = xs[max(i - 1, 0)], xs[min(i + 1, npts - 1)]
        xg, fg = golden_section_max(f, lo, hi)
        if fg > f_best:
            x_best, f_best = xg, fg
    return float(x_best), float(f_best)


# --------------------------------------------------------------------------
# Powell's direction-set method (bracketing + Brent line search)

GOLD = 1.618034
GLIMIT = 100.0
TINY = 1e-20
CGOLD = 0.3819660
ZEPS = 1e-18
BRENT_TOL = 3e-8


def line_value(args, p, xi, lam):
    return objective(p + lam * xi, args)


def bracket(args, p, xi):
    ax, bx = 0.0, 1.0
    fa = line_value(args, p, xi, ax)
    fb = line_value(args, p, xi, bx)
    nfev = 2
    if fb > fa:
        ax, bx = bx, ax
        fa, fb = fb, fa
    cx = bx + GOLD * (bx - ax)
    fc = line_value(args, p, xi, cx)
    nfev += 1
    while fb > fc:
        r = (bx - ax) * (fb - fc)
        q = (bx - cx) * (fb - fa)
        d = q - r
        if abs(d) < TINY:
            d = TINY if d >= 0 else -TINY
        u = bx - ((bx - cx) * q - (bx - ax) * r) / (2.0 * d)
        ulim = bx + GLIMIT * (cx - bx)
        if (bx - u) * (u - cx) > 0.0:
            fu = line_value(args, p, xi, u)
            nfev += 1
            if fu < fc:
                ax, bx, fa, fb = bx, u, fb, fu
                break
            elif fu > fb:
                cx, fc = u, fu
                break
            u = cx + GOLD * (cx - bx)
            fu = line_value(args, p, xi, u)
            nfev += 1
        elif (cx - u) * (u - ulim) > 0.0:
            fu = line_value(args, p, xi, u)
            nfev += 1
            if fu < fc:
                bx, cx = cx, u
                u = cx + GOLD * (cx - bx)
                fb, fc = fc, fu
                fu = line_value(args, p, xi, u)
                nfev += 1
        elif (u - ulim) * (ulim - cx) >= 0.0:
            u = ulim
            fu = line_value(args, p, xi, u)
            nfev += 1
        else:
            u = cx + GOLD * (cx - bx)
            fu = line_value(args, p, xi, u)
            nfev += 1
        ax, bx, cx = bx, cx, u
        fa, fb, fc = fb, fc, fu
    return ax, bx, cx, fb, nfev


def brent(args, p, xi, ax, bx, cx, fbx, xtol):
    a = min(ax, cx)
    b = max(ax, cx)
    x = w = v = bx
    fx = fw = fv = fbx
    d = 0.0
    e = 0.0
    nfev = 0
    for _ in range(100):
        xm = 0.5 * (a + b)
        tol1 = xtol * abs(x) + ZEPS
        tol2 = 2.0 * tol1
        if abs(x - xm) <= tol2 - 0.5 * (b - a):
            break
        if abs(e) > tol1:
            r = (x - w) * (fx - fv)
            q = (x - v) * (fx - fw)
            pp = (x - v) * q - (x - w) * r
            q = 2.0 * (q - r)
            if q > 0.0:
                pp = -pp
            q = abs(q)
            etemp = e
            e = d
            if abs(pp) >= abs(0.5 * q * etemp) or pp <= q * (a - x) or pp >= q * (b - x):
                e = (a - x) if x >= xm else (b - x)
                d = CGOLD * e
            else:
                d = pp / q
                u = x + d
                if u - a < tol2 or b - u < tol2:
                    d = tol1 if xm - x >= 0 else -tol1
        else:
            e = (a - x) if x >= xm else (b - x)
            d = CGOLD * e
        if abs(d) >= tol1:
            u = x + d
        else:
            u = x + (tol1 if d >= 0 else -tol1)
        fu = line_value(args, p, xi, u)
        nfev += 1
        if fu <= fx:
            if u >= x:
                a = x
            else:
                b = x
            v, w, x = w, x, u
            fv, fw, fx = fw, fx, fu
        else:
            if u < x:
                a = u
            else:
                b = u
            if fu <= fw or w == x:
                v, w = w, u
                fv, fw = fw, fu
            elif fu <= fv or v == x or v == w:
                v = u
                fv = fu
    return x, fx, nfev


def linmin(args, p, xi, xtol):
    ax, bx, cx, fb, n1 = bracket(args, p, xi)
    lam, fmin, n2 = brent(args, p, xi, ax, bx, cx, fb, xtol)
    step = lam * xi
    return p + step, step, fmin, n1 + n2


def powell_single(args, start, ftol, xtol, maxiter):
    n = start.size
    p = start.copy()
    xi = np.eye(n)
    fret = objective(p, args)
    nfev = 1
    pt = p.copy()
    for _ in range(maxiter):
        fp = fret
        ibig = 0
        delta = 0.0
        for i in range(n):
            fptt = fret
            p, step, fret, k = linmin(args, p, xi[i].copy(), xtol)
            xi[i] = step
            nfev += k
            if fptt - fret > delta:
                delta = fptt - fret
                ibig = i
        if 2.0 * (fp - fret) <= ftol * (abs(fp) + abs(fret)) + TINY:
            return p, fret, True, nfev
        ptt = 2.0 * p - pt
        xit = p - pt
        pt = p.copy()
        fptt = objective(ptt, args)
        nfev += 1
        if fptt < fp:
            t = 2.0 * (fp - 2.0 * fret + fptt) * (fp - fret - delta) ** 2 - delta * (fp - fptt) ** 2
            if t < 0.0:
                p, step, fret, k = linmin(args, p, xit, xtol)
                nfev += k
                xi[ibig] = xi[n - 1]
                xi[n - 1] = step
    return p, fret, False, nfev


def powell_multi(args, starts, ftol, xtol, maxiter):
    best_x = starts[0].copy()
    best_f = np.inf
    all_converged = True
    total = 0
    for j in range(starts.shape[0]):
        x, fx, ok, k = powell_single(args, starts[j], ftol, xtol, maxiter)
        total += k
        if fx < best_f:
            best_x, best_f, all_converged = x, fx, ok
    return best_x, best_f, all_converged, total


def objective(x, args):
    """Placeholder rebound by :func:`powell_family` to the real objective."""
    raise NotImplementedError


POWELL_FUNCTIONS = ("line_value", "bracket", "brent", "linmin", "powell_single", "powell_multi")


def powell_family(objective, jit=None):
    """Copies of the Powell routines bound to ``objective(x, args)``.

    The routines above are written once against the module-level name
    ``objective``; each copy shares their code but resolves ``objective``
    and the sibling routines in its own namespace. With ``jit`` (e.g. a
    numba decorator) the copies are compiled, so the objective becomes a
    static callee instead of a runtime argument.
    """
    scope = dict(globals())
    scope["objective"] = objective
    family = {}
    for name in POWELL_FUNCTIONS:
        fn = globals()[name]
        copy = types.FunctionType(fn.__code__, scope, name, fn.__defaults__)
        copy.__qualname__ = fn.__qualname__
        copy.__module__ = fn.__module__
        family[name] = jit(copy) if jit is not None else copy
    scope.update(family)
    return family
@dataclass
class PowellResult:
    x: np.ndarray
    fun: float
    converged: bool
    nfev: int = 0
    starts: list = field(default_factory=list)


def minimize_powell(
    f: Callable[[np.ndarray], float],
    start,
    tol: float = 1e-7,
    restarts: Sequence = (),
    maxiter: int = 200,
    line_tol: float = BRENT_TOL,
) -> PowellResult:
    """Powell direction-set minimisation from ``start`` and every restart.

    ``tol`` is the fractional decrease criterion of one full sweep. The
    best result over all starts is returned; ``converged`` refers to the run
    that produced it. Maximise by passing ``-f``.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    starts = np.atleast_2d(np.asarray([np.atleast_1d(start)] + [np.atleast_1d(r) for r in restarts], dtype=float))

    def wrapped(x, _args):
        return float(f(x))

    x, fx, ok, nfev = powell_family(wrapped)["powell_multi"](None, starts, tol, line_tol, maxiter)
    return PowellResult(np.asarray(x), float(fx), bool(ok), int(nfev), [s for s in starts])
