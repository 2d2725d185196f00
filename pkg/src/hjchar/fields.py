"""Differentiable scalar fields and the angular parametrisation of spheres."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numba
import numpy as np

__all__ = [
    "ScalarField",
    "Constant",
    "NormSquaredHalf",
    "Quadratic",
    "GaussOffset",
    "CallbackField",
    "field_eval_grad",
    "field_from_dict",
    "SphereAngles",
    "sphere_embed",
    "sphere_angles",
    "sphere_grid",
    "random_angles",
]

# kind codes shared with the compiled kernels
KIND_CONSTANT = 0
KIND_NORMSQ = 1
KIND_QUADRATIC = 2
KIND_GAUSS = 3
HEADER = 6


class ScalarField:
    """A C^1 field ``R^n -> R`` returning value and exact gradient."""

    n: int

    def eval_grad(self, x: np.ndarray) -> tuple[float, np.ndarray]:
        raise NotImplementedError

    def __call__(self, x) -> float:
        return self.eval_grad(x)[0]

    def grad(self, x) -> np.ndarray:
        return self.eval_grad(x)[1]

    def values(self, points) -> np.ndarray:
        """Field values at the rows of ``points`` (shape ``(k, n)``)."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        return np.array([self.eval_grad(x)[0] for x in pts])

    def sign_bounds(self) -> Optional[tuple[float, float]]:
        """Guaranteed (inf, sup) of the field, when known in closed form."""
        return None

    def pack(self) -> Optional[np.ndarray]:
        """Flat buffer for the compiled kernels; ``None`` for callbacks."""
        return None

    def to_dict(self) -> dict:
        raise TypeError(f"{type(self).__name__} is not serialisable")

    def _check(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape != (self.n,):
            raise ValueError(f"expected a vector of dimension {self.n}, got shape {x.shape}")
        return x

    def _buffer(self, kind, scalars=(), center=None, matrix=None):
        buf = np.zeros(HEADER + self.n + self.n * self.n)
        buf[0] = kind
        buf[1] = self.n
        buf[2 : 2 + len(scalars)] = scalars
        if center is not None:
            buf[HEADER : HEADER + self.n] = center
        if matrix is not None:
            buf[HEADER + self.n :] = np.asarray(matrix, dtype=float).ravel()
        return buf


@dataclass(frozen=True)
class Constant(ScalarField):
    value: float
    n: int

    def eval_grad(self, x):
        self._check(x)
        return float(self.value), np.zeros(self.n)

    def sign_bounds(self):
        return (float(self.value), float(self.value))

    def values(self, points):
        return np.full(np.atleast_2d(points).shape[0], float(self.value))

    def pack(self):
        return self._buffer(KIND_CONSTANT, (self.value,))

    def to_dict(self):
        return {"type": "constant", "value": self.value, "n": self.n}


@dataclass(frozen=True)
class NormSquaredHalf(ScalarField):
    n: int

    def eval_grad(self, x):
        x = self._check(x)
        return 0.5 * float(x @ x), x.copy()

    def sign_bounds(self):
        return (0.0, math.inf)

    def values(self, points):
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        return 0.5 * np.einsum("ij,ij->i", pts, pts)

    def pack(self):
        return self._buffer(KIND_NORMSQ)

    def to_dict(self):
        return {"type": "norm_squared_half", "n": self.n}


@dataclass(frozen=True, eq=False)
class Quadratic(ScalarField):
    """``0.5 <A x, x> + c0`` with symmetric ``A``."""

    A: np.ndarray
    c0: float = 0.0
    n: int = field(init=False)

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        if A.shape[0] != A.shape[1] or not np.allclose(A, A.T):
            raise ValueError("Quadratic needs a symmetric square matrix")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "n", A.shape[0])

    @classmethod
    def diagonal(cls, diag: Sequence[float], c0: float = 0.0) -> "Quadratic":
        return cls(np.diag(np.asarray(diag, dtype=float)), c0)

    def eval_grad(self, x):
        x = self._check(x)
        g = self.A @ x
        return 0.5 * float(x @ g) + self.c0, g

    def values(self, points):
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        return 0.5 * np.einsum("ij,ij->i", pts @ self.A, pts) + self.c0

    def sign_bounds(self):
        eig = np.linalg.eigvalsh(self.A)
        lo = self.c0 if eig.min() >= 0 else -math.inf
        hi = self.c0 if eig.max() <= 0 else math.inf
        return (lo, hi)

    def pack(self):
        is_diag = float(np.count_nonzero(self.A - np.diag(np.diag(self.A))) == 0)
        return self._buffer(KIND_QUADRATIC, (self.c0, is_diag), matrix=self.A)

    def to_dict(self):
        return {"type": "quadratic", "A": self.A.tolist(), "c0": self.c0}


@dataclass(frozen=True, eq=False)
class GaussOffset(ScalarField):
    """``base + amplitude * exp(-rate * |x - center|^2)``."""

    base: float
    amplitude: float
    rate: float
    center: np.ndarray
    n: int = field(init=False)

    def __post_init__(self):
        if self.rate <= 0:
            raise ValueError("rate must be positive")
        center = np.asarray(self.center, dtype=float).ravel()
        object.__setattr__(self, "center", center)
        object.__setattr__(self, "n", center.size)

    def eval_grad(self, x):
        d = self._check(x) - self.center
        bump = self.amplitude * math.exp(-self.rate * float(d @ d))
        return self.base + bump, -2.0 * self.rate * bump * d

    def values(self, points):
        d = np.atleast_2d(np.asarray(points, dtype=float)) - self.center
        return self.base + self.amplitude * np.exp(-self.rate * np.einsum("ij,ij->i", d, d))

    def sign_bounds(self):
        return (self.base + min(self.amplitude, 0.0), self.base + max(self.amplitude, 0.0))

    def pack(self):
        return self._buffer(KIND_GAUSS, (self.base, self.amplitude, self.rate), center=self.center)

    def to_dict(self):
        return {
            "type": "gauss_offset",
            "base": self.base,
            "amplitude": self.amplitude,
            "rate": self.rate,
            "center": self.center.tolist(),
        }


@dataclass(frozen=True)
class CallbackField(ScalarField):
    """User-supplied value and gradient callbacks."""

    fn: Callable[[np.ndarray], float]
    gradient: Callable[[np.ndarray], np.ndarray]
    n: int

    def eval_grad(self, x):
        x = self._check(x)
        return float(self.fn(x)), np.asarray(self.gradient(x), dtype=float)


def field_eval_grad(f: ScalarField, x) -> tuple[float, np.ndarray]:
    return f.eval_grad(x)


def field_from_dict(d: dict, n: Optional[int] = None) -> ScalarField:
    kind = d["type"]
    if kind == "constant":
        return Constant(float(d["value"]), int(d.get("n", n)))
    if kind == "norm_squared_half":
        return NormSquaredHalf(int(d.get("n", n)))
    if kind == "quadratic":
        if "A" in d:
            return Quadratic(np.asarray(d["A"], dtype=float), float(d.get("c0", 0.0)))
        return Quadratic.diagonal(_padded(d["diag"], n, d.get("diag_fill")), float(d.get("c0", 0.0)))
    if kind == "gauss_offset":
        center = _padded(d["center"], n, 0.0)
        return GaussOffset(float(d["base"]), float(d["amplitude"]), float(d["rate"]), center)
    raise ValueError(f"unknown field type {kind!r}")


def _padded(values, n, fill):
    values = list(values)
    if n is None or len(values) >= n:
        return values[: n] if n else values
    if fill is None:
        raise ValueError(f"need {n} entries, got {len(values)}")
    return values + [fill] * (n - len(values))


# --------------------------------------------------------------------------
# spheres


@dataclass(frozen=True, eq=False)
class SphereAngles:
    """Angles of a point on the unit sphere in ``R^m``: ``theta_1`` in
    ``[0, 2 pi)`` and the remaining ones in ``[0, pi]``."""

    angles: np.ndarray

    def __post_init__(self):
        a = np.atleast_1d(np.asarray(self.angles, dtype=float))
        if a.size < 1:
            raise ValueError("at least one angle (m >= 2) required")
        if not 0.0 <= a[0] < 2 * math.pi or np.any((a[1:] < 0) | (a[1:] > math.pi)):
            raise ValueError("angles outside the canonical box")
        object.__setattr__(self, "angles", a)

    @property
    def m(self) -> int:
        return self.angles.size + 1


def _embed(theta, out):
    # x_m = cos th_{m-1}; x_j = cos th_{j-1} prod_{i>=j} sin th_i; x_1 = prod sin
    m = theta.size + 1
    tail = 1.0
    for j in range(m - 1, 0, -1):
        out[j] = math.cos(theta[j - 1]) * tail
        tail *= math.sin(theta[j - 1])
    out[0] = tail
    return out


embed_nb = numba.njit(cache=True, nogil=True)(_embed)


def sphere_embed(angles) -> np.ndarray:
    """Unit vector in ``R^m`` for ``m - 1`` angles."""
    theta = angles.angles if isinstance(angles, SphereAngles) else np.atleast_1d(np.asarray(angles, dtype=float))
    if theta.size < 1:
        raise ValueError("sphere dimension must be at least 2")
    return _embed(theta, np.empty(theta.size + 1))


def sphere_angles(v) -> np.ndarray:
    """Angles of the direction of ``v`` (inverse of :func:`sphere_embed`)."""
    v = np.asarray(v, dtype=float)
    if v.size < 2:
        raise ValueError("sphere dimension must be at least 2")
    if not np.any(v):
        raise ValueError("zero vector has no direction")
    theta = np.empty(v.size - 1)
    theta[0] = math.atan2(v[0], v[1]) % (2.0 * math.pi)
    for k in range(1, v.size - 1):
        theta[k] = math.atan2(float(np.linalg.norm(v[: k + 1])), v[k + 1])
    return theta


def sphere_grid(m: int, counts) -> np.ndarray:
    """Tensor grid of angles, shape ``(N, m - 1)``.

    ``theta_1`` takes ``counts[0]`` equispaced values ``2 pi k / N`` and every
    polar angle uses cell midpoints of ``[0, pi]``.
    """
    if m < 2:
        raise ValueError("sphere dimension must be at least 2")
    counts = [int(counts)] if np.isscalar(counts) else [int(c) for c in counts]
    if len(counts) != m - 1 or min(counts) < 1:
        raise ValueError(f"need {m - 1} positive counts")
    axes = [2 * math.pi * np.arange(counts[0]) / counts[0]]
    axes += [math.pi * (np.arange(c) + 0.5) / c for c in counts[1:]]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([g.ravel() for g in mesh], axis=1)


def random_angles(rng: np.random.Generator, m: int, k: int) -> np.ndarray:
    """``k`` angle tuples drawn uniformly in the canonical angle box."""
    out = rng.uniform(0.0, math.pi, size=(k, m - 1))
    out[:, 0] *= 2.0
    return out
