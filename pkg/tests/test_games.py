import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from hjchar import games as G

vec2 = arrays(np.float64, 2, elements=st.floats(-3, 3))
pos = st.floats(0.0, 3.0)

SETS = [
    G.Ball2(0.7),
    G.BallInf(0.4),
    G.Segment([0.3, -0.1]),
    G.Point([1.0, 2.0]),
    G.Translate(G.Ball2(0.2), [1.0, -1.0]),
    G.MinkowskiSum(G.Segment([0.0, 1.0]), G.Ball2(0.5)),
    G.Scale(G.BallInf(1.0), 0.3),
]


@pytest.mark.parametrize("K", SETS, ids=lambda K: type(K).__name__)
@given(l=vec2, a=pos)
def test_support_positively_homogeneous(K, l, a):
    assert G.support(K, a * l) == pytest.approx(a * G.support(K, l), abs=1e-9)


@pytest.mark.parametrize("K", SETS, ids=lambda K: type(K).__name__)
@given(l1=vec2, l2=vec2)
def test_support_subadditive(K, l1, l2):
    assert G.support(K, l1 + l2) <= G.support(K, l1) + G.support(K, l2) + 1e-9


@pytest.mark.parametrize("K", SETS, ids=lambda K: type(K).__name__)
@given(l=vec2)
def test_arg_support_attains_support(K, l):
    x = G.arg_support(K, l)
    assert float(l @ x) == pytest.approx(G.support(K, l), abs=1e-9)


@given(l=vec2)
def test_minkowski_sum_adds_supports(l):
    A, B = G.Ball2(0.5), G.Segment([1.0, 2.0])
    assert G.support(G.MinkowskiSum(A, B), l) == pytest.approx(G.support(A, l) + G.support(B, l))


def test_segment_tie_returns_midpoint():
    assert np.all(G.arg_support(G.Segment([1.0, 0.0]), np.array([0.0, 1.0])) == 0)


def test_vectorised_support():
    L = np.random.default_rng(0).normal(size=(7, 2))
    K = G.Ball2(2.0)
    assert np.allclose(K.support(L), [K.support(l) for l in L])


def test_cauchy_matrix_double_integrator():
    A = np.array([[0.0, 1.0], [0.0, 0.0]])
    assert np.allclose(G.cauchy_matrix(A, 2.0, 0.5), [[1.0, 1.5], [0.0, 1.0]])


def test_cauchy_matrix_ode_agrees_with_exponential():
    A = G.ex40_game(G.Ex40Params()).A
    assert np.allclose(G.cauchy_matrix(A, 2.0, 0.1), G.cauchy_matrix_ode(A, 2.0, 0.1), atol=1e-8)


def test_cauchy_matrix_time_varying_callable():
    Phi = G.cauchy_matrix(lambda t: np.array([[t]]), 1.0, 0.0)
    assert Phi[0, 0] == pytest.approx(math.exp(0.5), rel=1e-8)


def test_hmax_closed_form():
    e = G.ex40_eval(G.Ex40Params(), 0.0, np.zeros(4))
    assert e.hmax == pytest.approx(0.1 - 0.1 * math.log(2), abs=1e-9)
    assert e.V == pytest.approx(e.hmax)
    assert np.all(e.ubar == 0) and np.all(e.vbar == 0)


def test_far_state_aims_along_line_of_sight():
    e = G.ex40_eval(G.Ex40Params(), 0.0, [10.0, 0.0, 0.0, 0.0])
    assert np.allclose(e.lbar, [1.0, 0.0], atol=1e-6)
    assert np.allclose(e.ubar, [-0.2, 0.0], atol=1e-6)
    assert np.allclose(e.vbar, [0.1, 0.0], atol=1e-6)
    assert e.V == pytest.approx(e.Vstar)


@settings(max_examples=10)
@given(st.floats(-1, 1), st.floats(-1, 1), st.floats(-0.5, 0.5), st.floats(-0.5, 0.5), st.floats(0, 2))
def test_value_dominates_programmed_maximin(x1, x2, x3, x4, t0):
    e = G.ex40_eval(G.Ex40Params(), t0, [x1, x2, x3, x4], angles=500)
    assert e.V >= e.Vstar >= 0.0
    assert e.Vstar >= e.Vtilde or e.Vstar == 0.0


def test_general_theorem_path_matches_closed_form():
    p = G.Ex40Params()
    g, d = G.ex40_game(p), G.ex40_decomposition(p)
    x = [0.05, -0.02, 0.1, 0.3]
    a = G.value_saddle_thm38(g, d, 0.5, x, angles=2000, check=False)
    b = G.ex40_eval(p, 0.5, x, angles=2000)
    assert a.V == pytest.approx(b.V, abs=1e-7)


def test_decomposition_consistent():
    p = G.Ex40Params(u0=[0.05, 0.0])
    assert G.check_decomposition(G.ex40_game(p), G.ex40_decomposition(p), samples=20) < 1e-6


def test_inconsistent_decomposition_rejected():
    p = G.Ex40Params()
    bad = G.Decomposition(lambda t: 0.0, lambda t: np.zeros(2), lambda t: G.Point([0.0, 0.0]))
    with pytest.raises(ValueError):
        G.value_saddle_thm38(G.ex40_game(p), bad, 0.0, np.zeros(4))


@settings(max_examples=10)
@given(st.floats(-1.5, 1.5), st.floats(-1.5, 1.5), st.floats(0.0, 1.0))
def test_ex28_closed_form(x1, x2, t0):
    vstar, _, _ = G.programmed_maximin_p36(G.ex28_game(2.0, 1.0, 1.0), t0, [x1, x2], angles=2000)
    assert vstar == pytest.approx(max(math.hypot(x1, x2) - (1.0 - t0), 0.0), abs=1e-4)


def test_gap_terms():
    assert G.closed_form_gap("ex39", {"a1": 1.0, "a2": 1.0, "T": 1.0}, 0.0) == pytest.approx(0.5)
    gap = G.closed_form_gap("ex34_thm32", dict(alpha=1.0, a=0.2, b_lower=0.1, b_upper=0.0, T=2.0), 0.0)
    assert gap == pytest.approx(0.1 - 0.1 * math.log(2), abs=1e-9)
    with pytest.raises(ValueError):
        G.closed_form_gap("ex34_thm32", dict(alpha=1.0, a=0.1, b_lower=0.1, b_upper=0.2, T=2.0), 0.0)


def test_future_start_rejected():
    with pytest.raises(ValueError):
        G.ex40_eval(G.Ex40Params(), 3.0, np.zeros(4))
