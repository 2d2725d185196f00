"""Linear zero-sum differential games with distance-to-set payoffs.

Player 1 (control ``u1``) minimises and player 2 (``u2``) maximises
``sigma(x(T)) = dist({x(T)}_k, M)`` for ``x' = A x + B1 u1 + B2 u2``.
Everything is expressed through support functions ``s(l; K)`` of convex
compact sets, so control sets and targets are built from a small algebra
of balls, segments, points, translations, scalings, sums and products.

The module provides the programmed maximin (the open-loop sup-inf value),
the closed-loop value for games whose maximin integrand splits into a
support function plus a scalar correction ``h(t)``, the saddle feedback
controls of that class, and the closed forms of the worked examples.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Union

import numpy as np
from scipy.linalg import expm

from .fields import sphere_embed, sphere_grid
from .numerics import ToleranceSpec, golden_section_max, grid_maximize_1d, integrate_adaptive

__all__ = [
    "ConvexSet",
    "Ball2",
    "BallInf",
    "Segment",
    "Point",
    "Translate",
    "MinkowskiSum",
    "Scale",
    "Product",
    "support",
    "arg_support",
    "cauchy_matrix",
    "cauchy_matrix_ode",
    "LinearGame",
    "Decomposition",
    "GameEval",
    "programmed_maximin_p36",
    "value_saddle_thm38",
    "Ex40Params",
    "r_alpha",
    "R_alpha",
    "ex40_h",
    "ex40_game",
    "ex40_decomposition",
    "ex40_eval",
    "ex28_game",
    "ex39_game",
    "ex34_game",
    "closed_form_gap",
    "thm32_gap",
]

DEFAULT_ANGLES = 10_000
DEFAULT_QUAD = 200
TIME_GRID = 10_001
CONSISTENCY_TOL = 1e-6


# --------------------------------------------------------------------------
# convex sets


class ConvexSet:
    """Nonempty convex compact set described by its support function.

    ``support`` accepts a single direction or a stack of directions (last
    axis = coordinates) and returns one value per direction.
    """

    dim: int

    def support(self, l) -> np.ndarray:
        raise NotImplementedError

    def arg_support(self, l) -> np.ndarray:
        raise NotImplementedError

    def _dirs(self, l):
        l = np.asarray(l, dtype=float)
        if l.shape[-1] != self.dim:
            raise ValueError(f"direction must have dimension {self.dim}")
        return l


@dataclass(frozen=True)
class Ball2(ConvexSet):
    """Euclidean ball of ``radius`` about the origin."""

    radius: float
    dim: int = 2

    def support(self, l):
        return self.radius * np.linalg.norm(self._dirs(l), axis=-1)

    def arg_support(self, l):
        l = self._dirs(l)
        nrm = float(np.linalg.norm(l))
        return self.radius * l / nrm if nrm > 0 else np.zeros(self.dim)


@dataclass(frozen=True)
class BallInf(ConvexSet):
    """Max-norm ball (a cube) of ``radius`` about the origin."""

    radius: float
    dim: int = 2

    def support(self, l):
        return self.radius * np.sum(np.abs(self._dirs(l)), axis=-1)

    def arg_support(self, l):
        return self.radius * np.sign(self._dirs(l))


@dataclass(frozen=True, eq=False)
class Segment(ConvexSet):
    """``{mu u0 : mu in [-1, 1]}``."""

    u0: np.ndarray
    dim: int = field(init=False)

    def __post_init__(self):
        u0 = np.asarray(self.u0, dtype=float).ravel()
        object.__setattr__(self, "u0", u0)
        object.__setattr__(self, "dim", u0.size)

    def support(self, l):
        return np.abs(self._dirs(l) @ self.u0)

    def arg_support(self, l):
        d = float(self._dirs(l) @ self.u0)
        if d > 0:
            return self.u0.copy()
        if d < 0:
            return -self.u0
        return np.zeros(self.dim)


@dataclass(frozen=True, eq=False)
class Point(ConvexSet):
    y: np.ndarray
    dim: int = field(init=False)

    def __post_init__(self):
        y = np.asarray(self.y, dtype=float).ravel()
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "dim", y.size)

    def support(self, l):
        return self._dirs(l) @ self.y

    def arg_support(self, l):
        self._dirs(l)
        return self.y.copy()


@dataclass(frozen=True, eq=False)
class Translate(ConvexSet):
    base: ConvexSet
    offset: np.ndarray
    dim: int = field(init=False)

    def __post_init__(self):
        off = np.asarray(self.offset, dtype=float).ravel()
        if off.size != self.base.dim:
            raise ValueError("offset dimension mismatch")
        object.__setattr__(self, "offset", off)
        object.__setattr__(self, "dim", self.base.dim)

    def support(self, l):
        return self.base.support(l) + self._dirs(l) @ self.offset

    def arg_support(self, l):
        return self.base.arg_support(l) + self.offset


@dataclass(frozen=True, eq=False)
class MinkowskiSum(ConvexSet):
    a: ConvexSet
    b: ConvexSet
    dim: int = field(init=False)

    def __post_init__(self):
        if self.a.dim != self.b.dim:
            raise ValueError("summands must share one dimension")
        object.__setattr__(self, "dim", self.a.dim)

    def support(self, l):
        return self.a.support(l) + self.b.support(l)

    def arg_support(self, l):
        return self.a.arg_support(l) + self.b.arg_support(l)


@dataclass(frozen=True, eq=False)
class Scale(ConvexSet):
    base: ConvexSet
    factor: float
    dim: int = field(init=False)

    def __post_init__(self):
        if self.factor < 0:
            raise ValueError("scale factor must be nonnegative")
        object.__setattr__(self, "dim", self.base.dim)

    def support(self, l):
        return self.factor * self.base.support(l)

    def arg_support(self, l):
        return self.factor * self.base.arg_support(l)


@dataclass(frozen=True, eq=False)
class Product(ConvexSet):
    """Cartesian product ``a x b``."""

    a: ConvexSet
    b: ConvexSet
    dim: int = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "dim", self.a.dim + self.b.dim)

    def support(self, l):
        l = self._dirs(l)
        return self.a.support(l[..., : self.a.dim]) + self.b.support(l[..., self.a.dim :])

    def arg_support(self, l):
        l = self._dirs(l)
        return np.concatenate([self.a.arg_support(l[: self.a.dim]), self.b.arg_support(l[self.a.dim :])])


def support(K: ConvexSet, l) -> Union[float, np.ndarray]:
    """``s(l; K) = max_{y in K} <l, y>`` (vectorised over leading axes)."""
    out = K.support(l)
    return float(out) if np.ndim(out) == 0 else out


def arg_support(K: ConvexSet, l) -> np.ndarray:
    """A point of ``K`` attaining the support value in direction ``l``."""
    return K.arg_support(np.asarray(l, dtype=float))


# --------------------------------------------------------------------------
# Cauchy matrix


def cauchy_matrix(A, T: float, t: float) -> np.ndarray:
    """``Phi(T, t)`` with ``d/dt Phi = -Phi A(t)``, ``Phi(T, T) = I``.

    Constant ``A`` uses the matrix exponential; a callable ``A(t)`` is
    integrated as an ODE.
    """
    if t > T:
        raise ValueError("need t <= T")
    if callable(A):
        return cauchy_matrix_ode(A, T, t)
    A = np.atleast_2d(np.asarray(A, dtype=float))
    return expm(A * (T - t))


def cauchy_matrix_ode(A, T: float, t: float, tol: ToleranceSpec = ToleranceSpec(1e-12, 1e-12, 1e-3, 10**6)):
    """ODE solution of the Cauchy-matrix equation, integrated in the
    reversed time ``s = T - t'`` where it reads ``dPsi/ds = Psi A(T - s)``."""
    Af = A if callable(A) else (lambda _t, M=np.atleast_2d(np.asarray(A, dtype=float)): M)
    n = np.atleast_2d(Af(T)).shape[0]
    if t == T:
        return np.eye(n)

    def rhs(s, y):
        psi = y.reshape(n, n)
        return (psi @ np.atleast_2d(Af(T - s))).ravel()

    traj = integrate_adaptive(rhs, 0.0, T - t, np.eye(n).ravel(), tol)
    return traj.y_final.reshape(n, n)


# --------------------------------------------------------------------------
# games


@dataclass(frozen=True, eq=False)
class LinearGame:
    """``x' = A x + B1 u1 + B2 u2``, payoff ``dist({x(T)}_k, M)``;
    ``u1`` minimises, ``u2`` maximises."""

    A: Union[np.ndarray, Callable]
    B1: np.ndarray
    B2: np.ndarray
    U1: ConvexSet
    U2: ConvexSet
    M: ConvexSet
    k: int
    T: float

    def __post_init__(self):
        B1 = np.atleast_2d(np.asarray(self.B1, dtype=float))
        B2 = np.atleast_2d(np.asarray(self.B2, dtype=float))
        object.__setattr__(self, "B1", B1)
        object.__setattr__(self, "B2", B2)
        if not callable(self.A):
            object.__setattr__(self, "A", np.atleast_2d(np.asarray(self.A, dtype=float)))
        n = B1.shape[0]
        if B2.shape[0] != n or not 1 <= self.k <= n:
            raise ValueError("inconsistent game dimensions (need k <= n)")
        if B1.shape[1] != self.U1.dim or B2.shape[1] != self.U2.dim or self.M.dim != self.k:
            raise ValueError("control or target set dimension mismatch")

    @property
    def n(self) -> int:
        return self.B1.shape[0]

    def phi(self, t: float) -> np.ndarray:
        return cauchy_matrix(self.A, self.T, t)

    def sigma(self, x) -> float:
        """Distance from ``{x}_k`` to ``M`` via the dual representation
        ``max(0, max_{|l|=1} <l, y> - s(l; M))`` on a fine sphere grid."""
        y = np.asarray(x, dtype=float)[: self.k]
        L = _sphere_directions(self.k, DEFAULT_ANGLES)
        return max(0.0, float(np.max(L @ y - self.M.support(L))))

    def kappa(self, t: float, L: np.ndarray) -> np.ndarray:
        """``kappa1 + kappa2`` at time ``t`` for every row of ``L``."""
        P = self.phi(t)[: self.k]
        k1 = -self.U1.support(-(L @ (P @ self.B1)))
        k2 = self.U2.support(L @ (P @ self.B2))
        return k1 + k2


def _sphere_directions(k: int, count: int) -> np.ndarray:
    if k == 1:
        return np.array([[1.0], [-1.0]])
    if k == 2:
        th = 2 * math.pi * np.arange(count) / count
        return np.stack([np.sin(th), np.cos(th)], axis=1)
    per = max(2, int(round(count ** (1.0 / (k - 1)))))
    return np.array([sphere_embed(a) for a in sphere_grid(k, (per,) * (k - 1))])


def _simpson_weights(a: float, b: float, n: int):
    x = np.linspace(a, b, n + 1)
    w = np.ones(n + 1)
    w[1:-1:2] = 4.0
    w[2:-1:2] = 2.0
    return x, w * (b - a) / (3 * n)


def _integrated_kappa(game: LinearGame, t0: float, L: np.ndarray, quad_n: int) -> np.ndarray:
    if t0 == game.T:
        return np.zeros(L.shape[0])
    if quad_n < 2 or quad_n % 2:
        raise ValueError("quadrature count must be even and >= 2")
    xs, ws = _simpson_weights(t0, game.T, quad_n)
    acc = np.zeros(L.shape[0])
    for t, w in zip(xs, ws):
        acc += w * game.kappa(t, L)
    return acc


def _angle_polish(fun, k: int, L: np.ndarray, i: int, count: int):
    """Golden-section refinement of a planar direction around grid index ``i``."""
    if k != 2:
        return L[i], None
    th0 = 2 * math.pi * i / count
    step = 2 * math.pi / count

    def f(th):
        return fun(np.array([math.sin(th), math.cos(th)]))

    th, val = golden_section_max(f, th0 - step, th0 + step, xtol=1e-13)
    return np.array([math.sin(th), math.cos(th)]), val


def programmed_maximin_p36(
    game: LinearGame,
    t0: float,
    x0,
    angles: int = DEFAULT_ANGLES,
    quad_n: int = DEFAULT_QUAD,
    polish: bool = True,
):
    """Programmed maximin ``(V*, V~*, l_best)`` at ``(t0, x0)``.

    ``V~* = max_{l in L_k} <l, {Phi(T,t0) x0}_k> + int (kappa1 + kappa2) -
    s(l; M)`` over a sphere grid (lowest index wins ties; planar
    directions are polished by golden section); ``V* = max(V~*, 0)``.
    """
    if t0 > game.T:
        raise ValueError("need t0 <= T")
    x0 = np.asarray(x0, dtype=float)
    y = (game.phi(t0) @ x0)[: game.k]
    L = _sphere_directions(game.k, angles)
    vals = L @ y + _integrated_kappa(game, t0, L, quad_n) - game.M.support(L)
    i = int(np.argmax(vals))
    lbest, vbest = L[i], float(vals[i])
    if polish:
        def fun(l):
            return float(l @ y + _integrated_kappa(game, t0, l[None, :], quad_n)[0] - game.M.support(l))

        lp, vp = _angle_polish(fun, game.k, L, i, L.shape[0])
        if vp is not None and vp > vbest:
            lbest, vbest = lp, vp
    return max(vbest, 0.0), vbest, lbest


@dataclass
class GameEval:
    V: float
    Vstar: float
    Vtilde: float
    lbar: Optional[np.ndarray]
    ubar: np.ndarray
    vbar: np.ndarray
    hmax: float = math.nan
    h_t0: float = math.nan


@dataclass(frozen=True)
class Decomposition:
    """Splitting of the integrated maximin term into
    ``<l, z_tilde(t)> - s(l; Pi(t)) + h(t)``."""

    h: Callable[[float], float]
    z_tilde: Callable[[float], np.ndarray]
    Pi: Callable[[float], ConvexSet]


def _max_h(h, t0, T):
    if t0 == T:
        return float(h(T))
    _, v = grid_maximize_1d(h, t0, T, TIME_GRID, polish=True)
    return float(v)


def check_decomposition(game: LinearGame, dec: Decomposition, samples: int = 100, seed: int = 0,
                        quad_n: int = 400) -> float:
    """Largest sampled mismatch of the decomposition identity."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(samples):
        t = rng.uniform(0.0, game.T)
        l = rng.normal(size=game.k)
        l /= np.linalg.norm(l)
        lhs = _integrated_kappa(game, t, l[None, :], quad_n)[0] - game.M.support(l)
        rhs = float(l @ dec.z_tilde(t)) - dec.Pi(t).support(l) + dec.h(t)
        worst = max(worst, abs(lhs - rhs))
    return worst


def value_saddle_thm38(
    game: LinearGame,
    dec: Decomposition,
    t0: float,
    x0,
    angles: int = DEFAULT_ANGLES,
    quad_n: int = DEFAULT_QUAD,
    check: bool = True,
    indifference: Optional[tuple] = None,
) -> GameEval:
    """Closed-loop value ``max(V*, max_{[t0,T]} h)`` and saddle controls.

    Outside the indifference region (``V~* > max(0, h(t0))``) the controls
    aim along the maximising direction ``lbar``; inside it any controls are
    optimal and ``indifference = (u, v)`` is returned (default: the
    support points in direction zero).
    """
    if check:
        err = check_decomposition(game, dec)
        if err > CONSISTENCY_TOL:
            raise ValueError(f"decomposition inconsistent with the game (mismatch {err:.3g})")
    x0 = np.asarray(x0, dtype=float)
    vstar, vtilde, _ = programmed_maximin_p36(game, t0, x0, angles, quad_n)
    hmax = _max_h(dec.h, t0, game.T)
    h0 = float(dec.h(t0))
    V = max(vstar, hmax)
    if vtilde > max(0.0, h0):
        y = (game.phi(t0) @ x0)[: game.k] + np.asarray(dec.z_tilde(t0), dtype=float)
        L = _sphere_directions(game.k, angles)
        Pi = dec.Pi(t0)
        vals = L @ y - Pi.support(L)
        i = int(np.argmax(vals))
        lbar, _ = _angle_polish(lambda l: float(l @ y - Pi.support(l)), game.k, L, i, L.shape[0])
        P = game.phi(t0)[: game.k]
        ubar = game.U1.arg_support(-(lbar @ (P @ game.B1)))
        vbar = game.U2.arg_support(lbar @ (P @ game.B2))
    else:
        lbar = None
        if indifference is not None:
            ubar, vbar = (np.asarray(v, dtype=float) for v in indifference)
        else:
            ubar = game.U1.arg_support(np.zeros(game.U1.dim))
            vbar = game.U2.arg_support(np.zeros(game.U2.dim))
    return GameEval(V, vstar, vtilde, lbar, ubar, vbar, hmax, h0)


# --------------------------------------------------------------------------
# worked examples


@dataclass(frozen=True, eq=False)
class Ex40Params:
    alpha: float = 1.0
    a: float = 0.2
    b: float = 0.1
    u0: np.ndarray = field(default_factory=lambda: np.zeros(2))
    T: float = 2.0

    def __post_init__(self):
        if not (self.alpha > 0 and self.a > 0 and self.b > 0):
            raise ValueError("alpha, a and b must be positive")
        u0 = np.asarray(self.u0, dtype=float).ravel()
        if u0.size != 2:
            raise ValueError("u0 must be a 2-vector")
        object.__setattr__(self, "u0", u0)


def r_alpha(alpha: float, T: float, t: float) -> float:
    return (1.0 - math.exp(-alpha * (T - t))) / alpha


def R_alpha(alpha: float, T: float, t: float) -> float:
    return (T - t) / alpha - (1.0 - math.exp(-alpha * (T - t))) / alpha**2


def ex40_h(p: Ex40Params, t: float) -> float:
    return (p.T - t) * p.b - p.a * R_alpha(p.alpha, p.T, t)


@functools.lru_cache(maxsize=256)
def _ex40_hmax(alpha: float, a: float, b: float, T: float, t0: float) -> float:
    p = Ex40Params(alpha, a, b, np.zeros(2), T)
    return _max_h(lambda t: ex40_h(p, t), t0, T)


def ex40_game(p: Ex40Params) -> LinearGame:
    A = np.zeros((4, 4))
    A[0, 2] = A[1, 3] = 1.0
    A[2, 2] = A[3, 3] = -p.alpha
    B1 = np.zeros((4, 2))
    B1[2, 0] = B1[3, 1] = 1.0
    B2 = np.zeros((4, 2))
    B2[0, 0] = B2[1, 1] = 1.0
    U1 = MinkowskiSum(Segment(p.u0), Ball2(p.a))
    return LinearGame(A, B1, B2, U1, Ball2(p.b), Point(np.zeros(2)), 2, p.T)


def ex40_decomposition(p: Ex40Params) -> Decomposition:
    return Decomposition(
        h=lambda t: ex40_h(p, t),
        z_tilde=lambda t: np.zeros(2),
        Pi=lambda t: Scale(Segment(p.u0), R_alpha(p.alpha, p.T, t)),
    )


def ex40_eval(p: Ex40Params, t0: float, x, angles: int = DEFAULT_ANGLES) -> GameEval:
    """Closed-form programmed maximin, value and saddle controls.

    In the indifference region the selection is ``u = u0`` and ``v = 0``.
    """
    if t0 > p.T:
        raise ValueError("need t0 <= T")
    x = np.asarray(x, dtype=float)
    r = r_alpha(p.alpha, p.T, t0)
    R = R_alpha(p.alpha, p.T, t0)
    y = np.array([x[0] + r * x[2], x[1] + r * x[3]])
    L = _sphere_directions(2, angles)
    vals = L @ y - R * np.abs(L @ p.u0)
    i = int(np.argmax(vals))

    def fun(l):
        return float(l @ y - R * abs(l @ p.u0))

    lbar, vp = _angle_polish(fun, 2, L, i, angles)
    best = max(float(vals[i]), vp)
    h0 = ex40_h(p, t0)
    vtilde = best + h0
    vstar = max(vtilde, 0.0)
    hmax = _ex40_hmax(float(p.alpha), float(p.a), float(p.b), float(p.T), float(t0))
    V = max(vstar, hmax)
    if vtilde > max(0.0, h0):
        ubar = -p.a * lbar + Segment(p.u0).arg_support(-lbar)
        vbar = p.b * lbar
    else:
        lbar = None
        ubar = p.u0.copy()
        vbar = np.zeros(2)
    return GameEval(V, vstar, vtilde, lbar, ubar, vbar, hmax, h0)


def ex28_game(a1: float, a2: float, T: float, n: int = 2) -> LinearGame:
    """``x' = u1 + u2`` with Euclidean balls and payoff ``|x(T)|``."""
    I = np.eye(n)
    return LinearGame(np.zeros((n, n)), I, I, Ball2(a1, n), Ball2(a2, n), Point(np.zeros(n)), n, T)


def ex39_game(a1: float, a2: float, T: float) -> LinearGame:
    A = np.zeros((4, 4))
    A[0, 2] = A[1, 3] = 1.0
    B1 = np.zeros((4, 2))
    B1[2, 0] = B1[3, 1] = 1.0
    B2 = np.zeros((4, 2))
    B2[0, 0] = B2[1, 1] = 1.0
    return LinearGame(A, B1, B2, Ball2(a1), Ball2(a2), Point(np.zeros(2)), 2, T)


def ex34_game(alpha: float, a: float, b_lower: float, b_upper: float, T: float,
              w0=(0.0, 0.0), w_lower=(0.0, 0.0), w_upper=(0.0, 0.0)) -> LinearGame:
    A = np.zeros((4, 4))
    A[0, 2] = A[1, 3] = 1.0
    A[2, 2] = A[3, 3] = -alpha
    B1 = np.zeros((4, 2))
    B1[2, 0] = B1[3, 1] = 1.0
    B2 = np.eye(4)
    U1 = Translate(BallInf(a), w0)
    U2 = Product(Translate(Ball2(b_lower), -np.asarray(w_lower, dtype=float)), Translate(BallInf(b_upper), w_upper))
    return LinearGame(A, B1, B2, U1, U2, Point(np.zeros(2)), 2, T)


def thm32_gap(h21: Callable, h3: Callable, rbar: float, t0: float, T: float) -> float:
    """``max_{t in [t0, T]} (h21(t) - h3(t)) - rbar``."""
    return _max_h(lambda t: h21(t) - h3(t), t0, T) - rbar


def closed_form_gap(example: str, params: dict, t0: float) -> float:
    """Correction term added to the programmed maximin by one programmed
    iteration: ``V = max(V*, gap)``.

    ``ex39``: params ``a1, a2, T``. ``ex34_thm32``: params ``alpha, a,
    b_lower, b_upper, T`` with ``a >= b_upper``.
    """
    T = float(params["T"])
    if t0 > T:
        raise ValueError("need t0 <= T")
    if example == "ex39":
        a1, a2 = float(params["a1"]), float(params["a2"])
        if a1 <= 0 or a2 <= 0:
            raise ValueError("a1 and a2 must be positive")
        return _max_h(lambda t: (a2 - 0.5 * a1 * (T - t)) * (T - t), t0, T)
    if example == "ex34_thm32":
        alpha, a = float(params["alpha"]), float(params["a"])
        bl, bu = float(params["b_lower"]), float(params["b_upper"])
        if alpha <= 0 or bl < 0 or bu < 0 or a < bu:
            raise ValueError("need alpha > 0, b_lower >= 0, b_upper >= 0 and a >= b_upper")
        return _max_h(lambda t: (T - t) * bl - R_alpha(alpha, T, t) * (a - bu), t0, T)
    raise ValueError(f"unknown example {example!r}")
