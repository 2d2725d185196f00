import csv
import io

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hjchar.acceptance import ex43_problem, reachable_ball_max
from hjchar.fields import CallbackField, Constant, GaussOffset, NormSquaredHalf, Quadratic
from hjchar.hj_core import (
    EMPTY_HORIZON,
    EikonalProblem,
    PowellSearch,
    SmoothHamiltonianProblem,
    SphereGridSearch,
    carry_adjoint,
    eval_value_grid,
    feedback_control,
    value_bolza_eikonal,
    value_bvp_align,
    value_eikonal,
    value_smooth_hopf_lax,
    write_value_csv,
    MAX,
)
from hjchar.numerics import RngSeed

GRID = SphereGridSearch(400)


@pytest.fixture(scope="module")
def ex43():
    return ex43_problem()


@pytest.fixture(scope="module")
def bolza_1d():
    return EikonalProblem(Constant(-1.0, 1), Constant(0.0, 1), 1.0, eta=NormSquaredHalf(1), critical_point=[0.0])


def test_min_problem_with_unit_speed():
    # c = -1, sigma = |x|^2/2: move straight towards the origin
    prob = EikonalProblem(Constant(-1.0, 2), NormSquaredHalf(2), 0.5)
    r = value_eikonal(prob, 0.0, [1.0, 0.0], SphereGridSearch(1000))
    assert r.value == pytest.approx(0.125, abs=1e-9)
    assert np.allclose(r.control_at_t0, [1.0, 0.0], atol=1e-9)


def test_constant_speed_matches_reachable_ball(rng):
    prob = ex43_problem(constant_speed=True)
    for x in rng.uniform([-3, -1.5], [3, 1.5], size=(4, 2)):
        v = value_eikonal(prob, 0.0, x, SphereGridSearch(1000)).value
        assert v == pytest.approx(reachable_ball_max(prob.sigma, x, prob.T), abs=1e-3)


def test_terminal_time_returns_payoff(ex43):
    x = np.array([0.7, -0.2])
    assert value_eikonal(ex43, ex43.T, x).value == ex43.sigma(x)


def test_empty_horizon(ex43):
    with pytest.raises(ValueError, match=EMPTY_HORIZON):
        value_eikonal(ex43, 1.0, [0.0, 0.0])


def test_stationary_candidate_at_critical_point():
    prob = EikonalProblem(Constant(1.0, 2), Quadratic.diagonal([0.25, 1.0], -0.5), 0.5, critical_point=[0, 0])
    r = value_eikonal(prob, 0.0, [0.0, 0.0])
    assert r.value == pytest.approx(-0.375, abs=1e-9)


def test_kernel_and_python_backends_agree(ex43):
    x = [0.4, -0.8]
    a = value_eikonal(ex43, 0.0, x, GRID, backend="kernel").value
    b = value_eikonal(ex43, 0.0, x, GRID, backend="python").value
    assert a == pytest.approx(b, abs=1e-9)


def test_callback_fields_use_python_backend():
    c = CallbackField(lambda x: 1.0 + 0.0 * x[0], lambda x: np.zeros(2), 2)
    sigma = Quadratic.diagonal([0.25, 1.0], -0.5)
    prob = EikonalProblem(c, sigma, 0.5, critical_point=[0, 0])
    v = value_eikonal(prob, 0.0, [1.0, 0.5], SphereGridSearch(200)).value
    ref = value_eikonal(ex43_problem(constant_speed=True), 0.0, [1.0, 0.5], SphereGridSearch(200)).value
    assert v == pytest.approx(ref, abs=1e-9)


def test_sign_indefinite_speed_rejected():
    with pytest.raises(ValueError):
        EikonalProblem(GaussOffset(-1.0, 3.0, 1.0, [0, 0]), NormSquaredHalf(2), 1.0)


def test_false_nonvanishing_declaration_rejected():
    with pytest.raises(ValueError):
        EikonalProblem(Constant(1.0, 2), Constant(3.0, 2), 1.0, condition="nonvanishing_gradient")
    prob = EikonalProblem(Constant(1.0, 2), NormSquaredHalf(2), 1.0,
                          condition="nonvanishing_gradient")
    assert prob.sense == MAX


def test_wrong_critical_point_rejected():
    with pytest.raises(ValueError):
        EikonalProblem(Constant(1.0, 2), NormSquaredHalf(2), 1.0, critical_point=[1.0, 0.0])


def test_bolza_needs_critical_point():
    with pytest.raises(ValueError):
        EikonalProblem(Constant(-1.0, 1), Constant(0.0, 1), 1.0, eta=NormSquaredHalf(1))


@pytest.mark.parametrize("backend", ["kernel", "python"])
def test_bolza_one_dimensional_oracle(bolza_1d, backend):
    r = value_bolza_eikonal(bolza_1d, 0.0, [1.0], SphereGridSearch(2000), backend=backend)
    assert r.value == pytest.approx(1 / 6, abs=1e-6)
    assert r.stop_time == pytest.approx(1.0, abs=5e-3)


def test_bolza_powell(bolza_1d):
    r = value_bolza_eikonal(bolza_1d, 0.0, [1.0], PowellSearch(tol=1e-7))
    assert r.value == pytest.approx(1 / 6, abs=1e-6)


def test_bolza_starting_at_critical_point(bolza_1d):
    r = value_bolza_eikonal(bolza_1d, 0.0, [0.0], SphereGridSearch(100))
    assert r.value == pytest.approx(0.0, abs=1e-12)
    assert np.all(feedback_control(bolza_1d, 0.0, [0.0]) == 0)


def test_carried_adjoint_continues_optimal_characteristic(bolza_1d):
    r = value_bolza_eikonal(bolza_1d, 0.0, [1.0], PowellSearch(tol=1e-7))
    w = carry_adjoint(bolza_1d, 0.0, [1.0], r.p0_opt, 0.5)
    x_half = r.trajectory(0.5)[:1]
    assert x_half[0] == pytest.approx(0.5, abs=1e-6)
    # a single bad start cannot do worse than the warm start
    cont = value_bolza_eikonal(bolza_1d, 0.5, x_half, PowellSearch(restarts=1, tol=1e-7), warm_start=w)
    assert cont.value == pytest.approx(0.5**3 / 6, abs=1e-6)


def test_carry_past_freeze_is_none(bolza_1d):
    r = value_bolza_eikonal(bolza_1d, 0.0, [1.0], PowellSearch(tol=1e-7))
    assert carry_adjoint(bolza_1d, 0.0, [1.0], r.p0_opt, 0.99 * r.stop_time) is not None
    assert carry_adjoint(bolza_1d, 0.0, [1.0], r.p0_opt, 1.5) is None


def test_feedback_points_downhill(bolza_1d):
    u = feedback_control(bolza_1d, 0.0, [1.0], SphereGridSearch(2000))
    # x' = c u with c = -1, so u = +1 moves towards the origin
    assert u[0] == pytest.approx(1.0)


@settings(max_examples=15)
@given(st.floats(-3, 3), st.floats(-1.5, 1.5))
def test_value_dominates_staying_put(x1, x2):
    prob = ex43_problem()
    x = np.array([x1, x2])
    assert value_eikonal(prob, 0.0, x, SphereGridSearch(100)).value >= prob.sigma(x) - 1e-12


@settings(max_examples=10)
@given(st.floats(-3, 3), st.floats(-1.5, 1.5))
def test_alignment_never_beats_optimisation(x1, x2):
    prob = ex43_problem()
    vm = value_eikonal(prob, 0.0, [x1, x2], GRID).value
    vb = value_bvp_align(prob, 0.0, [x1, x2], GRID).value
    assert vm >= vb - 1e-12


def test_scan_mode_dominates_terminal(ex43):
    x = [1.0, -1.0]
    a = value_eikonal(ex43, 0.0, x, GRID).value
    b = value_eikonal(ex43, 0.0, x, GRID, mode="scan_T").value
    assert b >= a - 1e-12


def test_powell_seed_reproducible(ex43):
    s = PowellSearch(5, 1e-7, RngSeed(3))
    a = value_eikonal(ex43, 0.0, [0.3, 0.2], s)
    b = value_eikonal(ex43, 0.0, [0.3, 0.2], s)
    assert a.value == b.value and np.array_equal(a.p0_opt, b.p0_opt)


def _kinetic(T):
    sigma = Quadratic(-np.eye(2))
    return SmoothHamiltonianProblem(lambda t, x, p: 0.5 * float(p @ p), lambda t, x, p: np.zeros(2),
                                    lambda t, x, p: p, sigma, T, sense=MAX)


@given(st.floats(-2, 2), st.floats(-2, 2), st.floats(0.1, 2.0))
@settings(max_examples=15)
def test_hopf_lax_kinetic_oracle(x1, x2, tau):
    prob = _kinetic(tau)
    x = np.array([x1, x2])
    r = value_smooth_hopf_lax(prob, 0.0, x, starts=[np.zeros(2)])
    assert r.value == pytest.approx(-0.5 * float(x @ x) / (1 + tau), abs=1e-6)


def test_grid_csv_layout(ex43):
    table = eval_value_grid(ex43, 0.0, [(-0.5, 0.5, 0.5), (-0.5, 0.5, 0.5)],
                            evaluator=lambda p, t, x: value_eikonal(p, t, x, GRID))
    text = write_value_csv(table)
    rows = list(csv.reader(io.StringIO(text)))
    assert rows[0][:4] == ["t", "x1", "x2", "value"]
    assert len(rows) == 10
    assert "\r" not in text
    digits = [v.split("e")[0].replace("-", "").replace(".", "").lstrip("0") for v in rows[1] if v != "nan"]
    assert max(len(d) for d in digits) <= 9


def test_grid_threads_do_not_change_output(ex43):
    ev = lambda p, t, x: value_eikonal(p, t, x, GRID)
    rect = [(-1.0, 1.0, 1.0), (-1.0, 1.0, 1.0)]
    a = write_value_csv(eval_value_grid(ex43, 0.0, rect, evaluator=ev, threads=1))
    b = write_value_csv(eval_value_grid(ex43, 0.0, rect, evaluator=ev, threads=3))
    assert a == b
