"""Monotone Lax-Friedrichs reference solver for 2-D eikonal problems.

The terminal-value problem ``V_t + c(x)|DV| + eta(x) = 0``, ``V(T) = sigma``
is marched backwards in time on a uniform grid. Writing ``tau = T - t``
turns it into ``V_tau = H(x, DV)``, and the Lax-Friedrichs flux with
artificial viscosity ``alpha_i >= max |dH/dp_i|`` makes each explicit step
a monotone (nondecreasing) map of the previous level as long as the CFL
bound ``dt * sum_i alpha_i / dx_i <= 1`` holds.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .hj_core import EikonalProblem, fmt

__all__ = ["Grid2D", "lax_friedrichs_solve", "grid_sample", "viscosity", "write_grid_csv", "read_grid_csv"]

OUT_OF_DOMAIN = "out of domain"
ALPHA_SAMPLES = 200
ALPHA_INFLATION = 1.05


@dataclass
class Grid2D:
    """Node values ``values[i, j]`` at ``origin + (i dx1, j dx2)``."""

    origin: tuple
    spacing: tuple
    counts: tuple
    values: np.ndarray

    def __post_init__(self):
        self.origin = tuple(float(v) for v in self.origin)
        self.spacing = tuple(float(v) for v in self.spacing)
        self.counts = tuple(int(v) for v in self.counts)
        if min(self.spacing) <= 0:
            raise ValueError("grid spacing must be positive")
        self.values = np.asarray(self.values, dtype=float).reshape(self.counts)

    def axis(self, k: int) -> np.ndarray:
        return self.origin[k] + self.spacing[k] * np.arange(self.counts[k])

    def nodes(self) -> np.ndarray:
        X1, X2 = np.meshgrid(self.axis(0), self.axis(1), indexing="ij")
        return np.stack([X1.ravel(), X2.ravel()], axis=1)

    @property
    def upper(self) -> tuple:
        return tuple(self.origin[k] + self.spacing[k] * (self.counts[k] - 1) for k in range(2))


def grid_sample(grid: Grid2D, point) -> float:
    """Bilinear interpolation of the node values."""
    x = np.asarray(point, dtype=float)
    idx = []
    frac = []
    for k in range(2):
        s = (x[k] - grid.origin[k]) / grid.spacing[k]
        last = grid.counts[k] - 1
        if s < -1e-9 or s > last + 1e-9:
            raise ValueError(OUT_OF_DOMAIN)
        s = min(max(s, 0.0), float(last))
        i = min(int(math.floor(s)), max(last - 1, 0))
        idx.append(i)
        frac.append(s - i if last > 0 else 0.0)
    (i, j), (a, b) = idx, frac
    v = grid.values
    i1 = min(i + 1, grid.counts[0] - 1)
    j1 = min(j + 1, grid.counts[1] - 1)
    return float((1 - a) * (1 - b) * v[i, j] + a * (1 - b) * v[i1, j] + (1 - a) * b * v[i, j1] + a * b * v[i1, j1])


def viscosity(problem: EikonalProblem, domain) -> tuple:
    """``(alpha_1, alpha_2)``: max |c| over a 200 x 200 sampling of the
    domain, inflated by 5 %."""
    (lo1, hi1), (lo2, hi2) = domain
    X1, X2 = np.meshgrid(np.linspace(lo1, hi1, ALPHA_SAMPLES), np.linspace(lo2, hi2, ALPHA_SAMPLES), indexing="ij")
    cmax = float(np.max(np.abs(problem.c.values(np.stack([X1.ravel(), X2.ravel()], axis=1)))))
    a = ALPHA_INFLATION * cmax
    return a, a


def _pad(V):
    # ghost layer by linear extrapolation
    G = np.empty((V.shape[0] + 2, V.shape[1] + 2))
    G[1:-1, 1:-1] = V
    G[0, 1:-1] = 2 * V[0] - V[1]
    G[-1, 1:-1] = 2 * V[-1] - V[-2]
    G[:, 0] = 2 * G[:, 1] - G[:, 2]
    G[:, -1] = 2 * G[:, -2] - G[:, -3]
    return G


def lax_friedrichs_solve(
    problem: EikonalProblem,
    domain,
    dx,
    dt: float,
    duration: float,
    alpha: Optional[tuple] = None,
) -> Grid2D:
    """Approximate ``V(T - duration, .)`` on the nodes of ``domain``.

    ``domain`` is ``((lo1, hi1), (lo2, hi2))`` and ``dx`` a scalar or a pair.
    The number of time steps is ``ceil(duration / dt)`` so the effective
    step never exceeds ``dt``.
    """
    if problem.n != 2:
        raise ValueError("the finite-difference reference is two-dimensional")
    dx1, dx2 = (float(dx), float(dx)) if np.isscalar(dx) else (float(dx[0]), float(dx[1]))
    (lo1, hi1), (lo2, hi2) = domain
    n1 = int(round((hi1 - lo1) / dx1)) + 1
    n2 = int(round((hi2 - lo2) / dx2)) + 1
    if n1 < 3 or n2 < 3:
        raise ValueError("domain must hold at least 3 nodes per axis")
    grid = Grid2D((lo1, lo2), (dx1, dx2), (n1, n2), np.zeros((n1, n2)))
    nodes = grid.nodes()
    cvals = problem.c.values(nodes).reshape(n1, n2)
    if not (np.all(cvals > 0) or np.all(cvals < 0)):
        raise ValueError("c is not sign-definite on the grid")
    a1, a2 = alpha if alpha is not None else viscosity(problem, domain)
    V = problem.sigma.values(nodes).reshape(n1, n2)
    if duration < 0:
        raise ValueError("duration must be nonnegative")
    if duration == 0:
        grid.values = V
        return grid
    if dt <= 0:
        raise ValueError("dt must be positive")
    steps = int(math.ceil(duration / dt - 1e-9))
    h = duration / steps
    cfl = h * (a1 / dx1 + a2 / dx2)
    if cfl > 1.0 + 1e-12:
        bound = 1.0 / (a1 / dx1 + a2 / dx2)
        raise ValueError(f"CFL condition violated: dt must be <= {bound:.6g} (got {h:.6g})")
    eta = problem.eta.values(nodes).reshape(n1, n2) if problem.is_bolza else 0.0
    for _ in range(steps):
        G = _pad(V)
        pm1 = (G[1:-1, 1:-1] - G[:-2, 1:-1]) / dx1
        pp1 = (G[2:, 1:-1] - G[1:-1, 1:-1]) / dx1
        pm2 = (G[1:-1, 1:-1] - G[1:-1, :-2]) / dx2
        pp2 = (G[1:-1, 2:] - G[1:-1, 1:-1]) / dx2
        H = cvals * np.hypot(0.5 * (pm1 + pp1), 0.5 * (pm2 + pp2)) + eta
        V = V + h * (H + 0.5 * a1 * (pp1 - pm1) + 0.5 * a2 * (pp2 - pm2))
    grid.values = V
    return grid


def write_grid_csv(grid: Grid2D, dest=None) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["x1", "x2", "value"])
    for (x1, x2), v in zip(grid.nodes(), grid.values.ravel()):
        w.writerow([fmt(x1), fmt(x2), fmt(v)])
    text = buf.getvalue()
    if dest is not None:
        if hasattr(dest, "write"):
            dest.write(text)
        else:
            with open(dest, "w", newline="") as fh:
                fh.write(text)
    return text


def read_grid_csv(src) -> Grid2D:
    """Inverse of :func:`write_grid_csv` (rows in any order)."""
    if hasattr(src, "read"):
        text = src.read()
    else:
        with open(src) as fh:
            text = fh.read()
    rows = list(csv.DictReader(io.StringIO(text)))
    data = np.array([[float(r["x1"]), float(r["x2"]), float(r["value"])] for r in rows])
    a1 = np.unique(data[:, 0])
    a2 = np.unique(data[:, 1])
    if a1.size * a2.size != data.shape[0]:
        raise ValueError("rows do not form a full rectangular grid")
    d1 = (a1[-1] - a1[0]) / max(a1.size - 1, 1)
    d2 = (a2[-1] - a2[0]) / max(a2.size - 1, 1)
    values = np.empty((a1.size, a2.size))
    i = np.searchsorted(a1, data[:, 0])
    j = np.searchsorted(a2, data[:, 1])
    values[i, j] = data[:, 2]
    return Grid2D((a1[0], a2[0]), (d1 or 1.0, d2 or 1.0), (a1.size, a2.size), values)
