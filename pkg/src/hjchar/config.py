"""Scenario files: schema validation, defaults and object construction.

A scenario is a JSON document with the sections ``problem``, ``query``,
``solver``, ``fd`` and ``mpc`` (see ``schema.json``). Unknown keys are
rejected. Defaults for everything optional live in :data:`DEFAULTS`.
"""

from __future__ import annotations

import copy
import json
from importlib import resources
from pathlib import Path
from typing import Union

import jsonschema
import numpy as np

from . import games as G
from .fields import field_from_dict
from .hj_core import EikonalProblem, PowellSearch, SmoothHamiltonianProblem, SphereGridSearch, MAX, MIN
from .mpc_sim import McConfig
from .numerics import RngSeed, ToleranceSpec

__all__ = ["ConfigError", "DEFAULTS", "load_config", "validate", "build_problem", "build_search", "builtin_config"]

DEFAULTS = {
    "seed": 0,
    "query": {"t0": 0.0},
    "solver": {
        "evaluator": "sphere_grid",
        "sphere_counts": 1000,
        "powell_restarts": 5,
        "powell_tol": 1e-7,
        "powell_line_tol": 1e-4,
        "mode": "terminal",
        "abs_tol": 1e-5,
        "rel_tol": 1e-5,
        "angles": 10_000,
        "quad_n": 200,
    },
    "fd": {"dx": 0.01, "domain": [[-5.0, 5.0], [-3.0, 3.0]]},
    "mpc": {"dt_sde": 1e-3, "dt_recomp": 0.05, "runs": 200},
}

GAME_KINDS = ("game_ex28", "game_ex39", "game_ex40", "game_ex34", "game_p36")


class ConfigError(ValueError):
    """Invalid scenario file (exit status 2 on the command line)."""


def _schema():
    text = resources.files("hjchar").joinpath("schema.json").read_text()
    return json.loads(text)


def validate(doc: dict) -> None:
    try:
        jsonschema.validate(doc, _schema())
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"{where}: {exc.message}") from None


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def load_config(src: Union[str, Path, dict]) -> dict:
    """Validated scenario with defaults filled in."""
    if isinstance(src, dict):
        doc = src
    else:
        try:
            doc = json.loads(Path(src).read_text())
        except OSError as exc:
            raise ConfigError(f"cannot read {src}: {exc}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{src}: invalid JSON ({exc})") from None
    validate(doc)
    return _merge(DEFAULTS, doc)


def builtin_config(name: str) -> dict:
    """One of the bundled scenarios (``example43``, ``example44``, ``example45``)."""
    text = resources.files("hjchar").joinpath("configs", f"{name}.json").read_text()
    return load_config(json.loads(text))


def _need(section: dict, *keys):
    missing = [k for k in keys if k not in section]
    if missing:
        raise ConfigError(f"problem needs {', '.join(missing)}")


def _set(d: dict) -> G.ConvexSet:
    t = d["type"]
    try:
        if t == "ball2":
            return G.Ball2(float(d["radius"]), int(d.get("dim", 2)))
        if t == "ballinf":
            return G.BallInf(float(d["radius"]), int(d.get("dim", 2)))
        if t == "segment":
            return G.Segment(d["u0"])
        if t == "point":
            return G.Point(d["y"])
        if t == "translate":
            return G.Translate(_set(d["base"]), d["offset"])
        if t == "sum":
            return G.MinkowskiSum(_set(d["a"]), _set(d["b"]))
        if t == "scale":
            return G.Scale(_set(d["base"]), float(d["factor"]))
        if t == "product":
            return G.Product(_set(d["a"]), _set(d["b"]))
    except KeyError as exc:
        raise ConfigError(f"convex set {t!r} needs {exc.args[0]!r}") from None
    raise ConfigError(f"unknown convex set {t!r}")


def _hamiltonian(h: dict, sigma, T: float) -> SmoothHamiltonianProblem:
    if h["type"] == "kinetic":
        r = float(h.get("r", 1.0))
        return SmoothHamiltonianProblem(
            H=lambda t, x, p: 0.5 * r * float(p @ p),
            DxH=lambda t, x, p: np.zeros_like(x),
            DpH=lambda t, x, p: r * p,
            sigma=sigma, T=T, sense=MAX,
        )
    if "c" not in h:
        raise ConfigError("speed_norm hamiltonian needs c")
    c = field_from_dict(h["c"], sigma.n)
    bounds = c.sign_bounds()
    if bounds is None or (bounds[0] <= 0 <= bounds[1]):
        raise ConfigError("speed_norm needs a sign-definite c")

    def unit(p):
        pn = float(np.linalg.norm(p))
        return p / pn if pn > 0 else np.zeros_like(p)

    return SmoothHamiltonianProblem(
        H=lambda t, x, p: c(x) * float(np.linalg.norm(p)),
        DxH=lambda t, x, p: c.grad(x) * float(np.linalg.norm(p)),
        DpH=lambda t, x, p: c(x) * unit(p),
        sigma=sigma, T=T, sense=MAX if bounds[0] > 0 else MIN, homogeneous=True,
    )


def build_problem(cfg: dict):
    """Problem object for the ``problem`` section.

    Returns an :class:`EikonalProblem`, a :class:`SmoothHamiltonianProblem`
    or, for game kinds, a ``(kind, payload)`` pair where ``payload`` is an
    :class:`~hjchar.games.Ex40Params`, a parameter dict or a
    :class:`~hjchar.games.LinearGame`.
    """
    p = cfg["problem"]
    kind = p["kind"]
    try:
        if kind in ("eikonal", "bolza_eikonal"):
            _need(p, "n", "T", "c", "sigma")
            n = int(p["n"])
            eta = None
            if kind == "bolza_eikonal":
                _need(p, "eta")
                eta = field_from_dict(p["eta"], n)
            return EikonalProblem(
                field_from_dict(p["c"], n),
                field_from_dict(p["sigma"], n),
                float(p["T"]),
                eta=eta,
                condition=p.get("condition", "critical_extremal"),
                critical_point=p.get("critical_point"),
                critical_tol=float(p.get("critical_tol", 5e-6)),
            )
        if kind == "smooth_h":
            _need(p, "n", "T", "sigma", "hamiltonian")
            sigma = field_from_dict(p["sigma"], int(p["n"]))
            return _hamiltonian(p["hamiltonian"], sigma, float(p["T"]))
        _need(p, "T", "game")
        g = p["game"]
        T = float(p["T"])
        if kind == "game_ex40":
            return kind, G.Ex40Params(g.get("alpha", 1.0), g.get("a", 0.2), g.get("b", 0.1),
                                      g.get("u0", [0.0, 0.0]), T)
        if kind == "game_ex28":
            return kind, G.ex28_game(g["a1"], g["a2"], T, int(p.get("n", 2)))
        if kind == "game_ex39":
            return kind, {"a1": g["a1"], "a2": g["a2"], "T": T, "game": G.ex39_game(g["a1"], g["a2"], T)}
        if kind == "game_ex34":
            prm = {"alpha": g["alpha"], "a": g["a"], "b_lower": g["b_lower"], "b_upper": g["b_upper"], "T": T}
            prm["game"] = G.ex34_game(g["alpha"], g["a"], g["b_lower"], g["b_upper"], T)
            return kind, prm
        if kind == "game_p36":
            for key in ("A", "B1", "B2", "U1", "U2", "M", "k"):
                if key not in g:
                    raise ConfigError(f"game_p36 needs {key}")
            return kind, G.LinearGame(np.array(g["A"], dtype=float), g["B1"], g["B2"], _set(g["U1"]), _set(g["U2"]),
                                      _set(g["M"]), int(g["k"]), T)
    except ConfigError:
        raise
    except KeyError as exc:
        raise ConfigError(f"missing parameter {exc.args[0]!r}") from None
    except (ValueError, TypeError) as exc:
        raise ConfigError(str(exc)) from None
    raise ConfigError(f"unknown problem kind {kind!r}")


def build_search(cfg: dict, seed: int = None):
    s = cfg["solver"]
    if s["evaluator"] == "powell":
        return PowellSearch(int(s["powell_restarts"]), float(s["powell_tol"]),
                            RngSeed(cfg["seed"] if seed is None else seed), float(s["powell_line_tol"]))
    return SphereGridSearch(int(s["sphere_counts"]))


def build_tolerance(cfg: dict) -> ToleranceSpec:
    s = cfg["solver"]
    return ToleranceSpec(float(s["abs_tol"]), float(s["rel_tol"]))


def build_mc(cfg: dict, n: int, paper_scale: bool = False, seed: int = None) -> McConfig:
    m = cfg["mpc"]
    noise = m.get("noise_diag")
    if noise is None:
        noise = [0.3, 0.3] + [0.0] * (n - 2)
    kw = dict(dt_recomp=float(m["dt_recomp"]), seed=RngSeed(cfg["seed"] if seed is None else seed),
              noise_diag=tuple(noise))
    try:
        if paper_scale:
            return McConfig.paper_scale(**kw)
        return McConfig(dt_sde=float(m["dt_sde"]), runs=int(m["runs"]), **kw)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
