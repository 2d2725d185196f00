import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from hjchar.numerics import (
    IntegrationError,
    RngSeed,
    ToleranceSpec,
    Trajectory,
    golden_section_max,
    grid_maximize_1d,
    integrate_adaptive,
    integrate_sde_em,
    integrate_with_stop,
    minimize_powell,
    quad_simpson,
)


def test_exponential_decay_to_tolerance():
    traj = integrate_adaptive(lambda t, y: -y, 0.0, 1.0, [1.0], ToleranceSpec(1e-10, 1e-10))
    assert abs(traj.y_final[0] - math.exp(-1)) < 1e-8
    assert traj.t_final == 1.0


def test_harmonic_oscillator_dense_output():
    traj = integrate_adaptive(lambda t, y: np.array([y[1], -y[0]]), 0.0, 3.0, [1.0, 0.0],
                              ToleranceSpec(1e-10, 1e-10))
    for t in np.linspace(0.0, 3.0, 17):
        assert np.allclose(traj(t), [math.cos(t), -math.sin(t)], atol=1e-6)


def test_empty_interval_rejected():
    with pytest.raises(ValueError):
        integrate_adaptive(lambda t, y: y, 0.5, 0.5, [2.0])


def test_nonfinite_rhs_raises():
    with pytest.raises(IntegrationError):
        integrate_adaptive(lambda t, y: np.array([math.nan]), 0.0, 1.0, [1.0])


def test_step_budget_exhausted():
    with pytest.raises(IntegrationError):
        integrate_adaptive(lambda t, y: -50 * y, 0.0, 10.0, [1.0], ToleranceSpec(1e-12, 1e-12, 1e-3, 5))


def test_stop_time_located_by_bisection():
    # y' = -1 from 1: crosses 0.25 at t = 0.75
    traj, t_stop = integrate_with_stop(lambda t, y: np.array([-1.0]), lambda y: y[0] < 0.25, 0.0, 2.0, [1.0])
    assert abs(t_stop - 0.75) < 1e-9
    assert traj.t_final == pytest.approx(t_stop)


def test_probe_catches_dip_inside_one_step():
    # y = (t - 1)^2 + 1e-3 only dips below 2e-3 near t = 1; probe reports it
    def probe(step):
        a, b = step.times
        return 1.0 if a < 1.0 < b else None

    rhs = lambda t, y: np.array([2 * (t - 1.0)])
    _, t_stop = integrate_with_stop(rhs, lambda y: y[0] < 2e-3, 0.0, 2.0, [1.001],
                                    ToleranceSpec(1e-3, 1e-3, 0.5), probe)
    assert t_stop is not None and abs(t_stop - (1.0 - math.sqrt(1e-3))) < 1e-6


def test_simpson_is_fourth_order():
    exact = math.e - 1
    e1 = abs(quad_simpson(math.exp, 0, 1, 8) - exact)
    e2 = abs(quad_simpson(math.exp, 0, 1, 16) - exact)
    assert e1 / e2 >= 8


def test_simpson_rejects_odd_panels():
    with pytest.raises(ValueError):
        quad_simpson(math.sin, 0, 1, 3)


@given(st.floats(-3, 3), st.floats(0.1, 5))
def test_simpson_exact_for_cubics(c, b):
    f = lambda x: x**3 - c * x**2 + 2
    exact = b**4 / 4 - c * b**3 / 3 + 2 * b
    assert quad_simpson(f, 0.0, b, 2) == pytest.approx(exact, rel=1e-12, abs=1e-12)


@given(st.floats(-2, 2))
def test_golden_section_finds_parabola_peak(x0):
    x, v = golden_section_max(lambda x: -(x - x0) ** 2, -3, 3)
    assert abs(x - x0) < 1e-6 and v <= 0


def test_grid_maximize_ties_go_to_lowest_index():
    x, _ = grid_maximize_1d(lambda x: 1.0, 0.0, 1.0, 11, polish=False)
    assert x == 0.0


def test_powell_rosenbrock():
    f = lambda x: (1 - x[0]) ** 2 + 100 * (x[1] - x[0] ** 2) ** 2
    res = minimize_powell(f, [-1.2, 1.0], tol=1e-12)
    assert np.allclose(res.x, [1, 1], atol=1e-4)


@given(st.lists(st.floats(-5, 5), min_size=2, max_size=2), st.integers(0, 3))
def test_powell_never_worse_than_any_start(start, k):
    f = lambda x: math.sin(3 * x[0]) + (x[1] - 0.5) ** 2 + 0.1 * x[0] ** 2
    rng = np.random.default_rng(k)
    restarts = rng.uniform(-5, 5, size=(k, 2))
    res = minimize_powell(f, start, 1e-8, restarts)
    assert res.fun <= min(f(np.asarray(s)) for s in [start, *restarts]) + 1e-12


def test_sde_reproducible_and_stream_independent():
    drift = lambda t, y: -y
    a = integrate_sde_em(drift, [0.3, 0.3], 1e-2, 0, 1, [1.0, 0.0], RngSeed(7, 3))
    b = integrate_sde_em(drift, [0.3, 0.3], 1e-2, 0, 1, [1.0, 0.0], RngSeed(7, 3))
    c = integrate_sde_em(drift, [0.3, 0.3], 1e-2, 0, 1, [1.0, 0.0], RngSeed(7, 4))
    assert np.array_equal(a.states, b.states)
    assert not np.array_equal(a.states, c.states)


def test_sde_zero_noise_is_explicit_euler():
    path = integrate_sde_em(lambda t, y: -y, [0.0], 0.1, 0.0, 1.0, [1.0])
    assert path.y_final[0] == pytest.approx(0.9**10)


def test_sde_variance_of_brownian_motion():
    finals = [integrate_sde_em(lambda t, y: 0 * y, [1.0], 0.01, 0, 1, [0.0], RngSeed(0, k)).y_final[0]
              for k in range(400)]
    assert abs(np.var(finals) - 1.0) < 0.2


def test_trajectory_rejects_unsorted_times():
    with pytest.raises(ValueError):
        Trajectory([0.0, 0.0], [[1.0], [2.0]])
