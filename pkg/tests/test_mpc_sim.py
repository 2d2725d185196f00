import csv
import io
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hjchar.fields import Constant, NormSquaredHalf
from hjchar.hj_core import EikonalProblem
from hjchar.mpc_sim import (
    McConfig,
    RunStats,
    build_open_loop,
    compare_report,
    simulate_runs,
    summary_json,
    write_stats_csv,
)
from hjchar.numerics import RngSeed

X0 = np.array([0.5, 0.0])


@pytest.fixture(scope="module")
def plane():
    return EikonalProblem(Constant(-1.0, 2), Constant(0.0, 2), 1.0, eta=NormSquaredHalf(2), critical_point=[0, 0])


def _cfg(**kw):
    base = dict(dt_sde=1e-2, dt_recomp=0.1, runs=8, noise_diag=(0.3, 0.3))
    base.update(kw)
    return McConfig(**base)


def idle(t, x):
    return np.zeros(2)


def test_config_validation():
    with pytest.raises(ValueError):
        McConfig(dt_sde=0.003, dt_recomp=0.05)
    with pytest.raises(ValueError):
        McConfig(runs=0)
    assert McConfig().ratio == 50
    assert McConfig.paper_scale().dt_sde == 1e-5 and McConfig.paper_scale().runs == 1000


def test_open_loop_schedule(plane):
    s = build_open_loop(plane, 0.0, X0)
    assert s.value == pytest.approx(0.5**3 / 6, abs=1e-5)
    # freezes once eta = |x|^2 / 2 drops below the critical tolerance
    assert s.hit_time == pytest.approx(0.5 - np.sqrt(2 * plane.critical_tol), abs=1e-6)
    assert np.allclose(s(0.1), [1.0, 0.0], atol=1e-6)
    assert np.all(s(0.9) == 0)


def test_noise_free_open_loop_tracks_value(plane):
    s = build_open_loop(plane, 0.0, X0)
    st_ = simulate_runs(plane, s, _cfg(dt_sde=1e-3, runs=1, noise_diag=(0.0, 0.0)), 0.0, X0)
    assert st_.J == pytest.approx(s.value, abs=1e-3)


def test_noise_free_mpc_equals_open_loop(plane):
    quiet = _cfg(runs=1, noise_diag=(0.0, 0.0))
    ol = simulate_runs(plane, build_open_loop(plane, 0.0, X0), quiet, 0.0, X0)
    cl = simulate_runs(plane, "mpc", quiet, 0.0, X0)
    assert abs(cl.J - ol.J) <= 1e-3


def test_idle_controller_cost(plane):
    quiet = _cfg(runs=1, noise_diag=(0.0, 0.0))
    st_ = simulate_runs(plane, idle, quiet, 0.0, X0)
    assert st_.J == pytest.approx(0.125)


def test_reproducible_and_thread_independent(plane):
    a = simulate_runs(plane, idle, _cfg(), 0.0, X0)
    b = simulate_runs(plane, idle, _cfg(), 0.0, X0, threads=4)
    assert a.J == b.J and np.array_equal(a.mean_eta, b.mean_eta)
    c = simulate_runs(plane, idle, _cfg(seed=RngSeed(1)), 0.0, X0)
    assert c.J != a.J


def test_estimate_equals_mean_of_run_costs(plane):
    st_ = simulate_runs(plane, idle, _cfg(runs=16), 0.0, X0)
    assert st_.J == pytest.approx(float(np.mean(st_.run_costs)), rel=1e-12)


def test_standard_error_scales_like_inverse_root(plane):
    small = simulate_runs(plane, idle, _cfg(runs=100), 0.0, X0)
    large = simulate_runs(plane, idle, _cfg(runs=200), 0.0, X0)
    assert 1.2 <= small.J_se / large.J_se <= 1.7


@settings(max_examples=20)
@given(st.lists(st.floats(0, 1), min_size=3, max_size=3), st.lists(st.floats(0, 1), min_size=3, max_size=3))
def test_compare_is_antisymmetric(a, b):
    t = np.array([0.0, 0.5, 1.0])
    A = RunStats(t, np.array(a), np.zeros(3), float(np.mean(a)), 0.0)
    B = RunStats(t, np.array(b), np.zeros(3), float(np.mean(b)), 0.0)
    ab, ba = compare_report(A, B), compare_report(B, A)
    assert ab.difference == -ba.difference
    assert not (ab.cl_better and ba.cl_better)


def test_compare_rejects_grid_mismatch():
    A = RunStats(np.array([0.0, 1.0]), np.zeros(2), np.zeros(2), 0.0, 0.0)
    B = RunStats(np.array([0.0, 0.5, 1.0]), np.zeros(3), np.zeros(3), 0.0, 0.0)
    with pytest.raises(ValueError):
        compare_report(A, B)


def test_outputs(plane, tmp_path):
    ol = simulate_runs(plane, idle, _cfg(), 0.0, X0)
    cl = simulate_runs(plane, lambda t, x: x / max(np.linalg.norm(x), 1e-12), _cfg(), 0.0, X0)
    text = write_stats_csv(ol, cl, tmp_path / "s.csv")
    rows = list(csv.reader(io.StringIO(text)))
    assert rows[0] == ["t", "mean_eta_ol", "std_eta_ol", "mean_eta_cl", "std_eta_cl"]
    assert len(rows) == len(ol.times) + 1
    doc = json.loads(summary_json(compare_report(ol, cl), _cfg()))
    assert doc["cl_better"] == (doc["J_cl"] < doc["J_ol"])
    assert doc["config"]["runs"] == 8


def test_noise_dimension_checked(plane):
    with pytest.raises(ValueError):
        simulate_runs(plane, idle, _cfg(noise_diag=(0.3,)), 0.0, X0)
