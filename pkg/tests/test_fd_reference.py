import io

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from hjchar.acceptance import ex43_problem, reachable_ball_max
from hjchar.fd_reference import Grid2D, grid_sample, lax_friedrichs_solve, read_grid_csv, write_grid_csv

DOMAIN = ((-2.0, 2.0), (-2.0, 2.0))


def test_zero_duration_returns_payoff():
    prob = ex43_problem()
    g = lax_friedrichs_solve(prob, DOMAIN, 0.1, 0.01, 0.0)
    assert grid_sample(g, (1.0, 0.5)) == pytest.approx(prob.sigma(np.array([1.0, 0.5])))


def test_cfl_violation_reported():
    with pytest.raises(ValueError, match="CFL"):
        lax_friedrichs_solve(ex43_problem(constant_speed=True), DOMAIN, 0.1, 0.2, 0.5)


def test_converges_towards_oracle():
    prob = ex43_problem(constant_speed=True)
    x = (0.8, -0.4)
    exact = reachable_ball_max(prob.sigma, x, 0.5)
    errs = []
    for dx in (0.1, 0.05):
        g = lax_friedrichs_solve(prob, DOMAIN, dx, 0.9 * dx / (2 * 1.05), 0.5)
        errs.append(abs(grid_sample(g, x) - exact))
    assert errs[1] < errs[0]


def test_interpolation_exact_for_bilinear():
    g = Grid2D((0.0, 0.0), (0.5, 0.25), (5, 5), np.zeros((5, 5)))
    X = g.nodes()
    g.values = (1 + 2 * X[:, 0] - X[:, 1] + 3 * X[:, 0] * X[:, 1]).reshape(5, 5)
    assert grid_sample(g, (0.3, 0.7)) == pytest.approx(1 + 0.6 - 0.7 + 3 * 0.21)


def test_outside_domain_rejected():
    g = Grid2D((0.0, 0.0), (1.0, 1.0), (3, 3), np.zeros((3, 3)))
    with pytest.raises(ValueError):
        grid_sample(g, (5.0, 0.0))


@given(st.integers(3, 6), st.integers(3, 6), st.integers(0, 99))
def test_csv_round_trip(n1, n2, seed):
    vals = np.random.default_rng(seed).normal(size=(n1, n2))
    g = Grid2D((-1.0, 2.0), (0.5, 0.25), (n1, n2), vals)
    back = read_grid_csv(io.StringIO(write_grid_csv(g)))
    assert back.counts == g.counts
    assert np.allclose(back.values, vals, rtol=1e-8)
