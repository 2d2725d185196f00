import copy
import csv
import io
import json

import numpy as np
import pytest

from hjchar import cli
from hjchar.config import ConfigError, build_mc, build_problem, builtin_config, load_config
from hjchar.hj_core import EikonalProblem

SMALL = {
    "problem": {
        "kind": "eikonal",
        "n": 2,
        "T": 0.5,
        "c": {"type": "constant", "value": -1.0},
        "sigma": {"type": "norm_squared_half"},
        "condition": "critical_extremal",
    },
    "query": {"t0": 0.0, "points": [[1.0, 0.0]]},
    "solver": {"sphere_counts": 400},
}


def _write(tmp_path, doc, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(doc))
    return str(path)


@pytest.mark.parametrize("name", ["example43", "example44", "example45"])
def test_bundled_configs_load(name):
    cfg = builtin_config(name)
    built = build_problem(cfg)
    assert built is not None


def test_unknown_key_rejected():
    doc = copy.deepcopy(SMALL)
    doc["solver"]["bogus"] = 1
    with pytest.raises(ConfigError):
        load_config(doc)


def test_defaults_filled():
    cfg = load_config(SMALL)
    assert cfg["solver"]["powell_restarts"] == 5
    assert cfg["mpc"]["runs"] == 200


def test_ex45_problem_data():
    prob = build_problem(builtin_config("example45"))
    assert isinstance(prob, EikonalProblem) and prob.n == 6 and prob.freezes
    assert prob.eta(np.array([0, 0, 2.0, 0, 0, 0])) == pytest.approx(1.0)
    mc = build_mc(builtin_config("example45"), 6, paper_scale=True)
    assert mc.runs == 1000 and mc.dt_sde == 1e-5


def test_value_command_prints_one_row(tmp_path, capsys):
    assert cli.main(["value", "--config", _write(tmp_path, SMALL)]) == 0
    rows = list(csv.reader(io.StringIO(capsys.readouterr().out)))
    assert len(rows) == 2 and float(rows[1][3]) == pytest.approx(0.125, abs=1e-9)


def test_value_at_terminal_time_prints_payoff(tmp_path, capsys):
    doc = copy.deepcopy(SMALL)
    doc["query"] = {"t0": 0.5, "points": [[1.0, 2.0]]}
    assert cli.main(["value", "--config", _write(tmp_path, doc)]) == 0
    rows = list(csv.reader(io.StringIO(capsys.readouterr().out)))
    assert float(rows[1][3]) == pytest.approx(2.5)


def test_grid_command_writes_nine_rows(tmp_path):
    doc = copy.deepcopy(SMALL)
    doc["query"] = {"t0": 0.0, "rectangle": [[-1, 1, 1], [-1, 1, 1]]}
    out = tmp_path / "out"
    assert cli.main(["grid", "--config", _write(tmp_path, doc), "--out", str(out)]) == 0
    text = (out / "grid.csv").read_text()
    assert len(text.strip().split("\n")) == 10
    assert cli.main(["grid", "--config", _write(tmp_path, doc), "--out", str(tmp_path / "o2"),
                     "--threads", "3"]) == 0
    assert (tmp_path / "o2" / "grid.csv").read_text() == text


def test_game_command_at_origin(tmp_path, capsys):
    doc = json.loads(json.dumps({
        "problem": {"kind": "game_ex40", "T": 2.0, "game": {"alpha": 1.0, "a": 0.2, "b": 0.1, "u0": [0, 0]}},
        "query": {"t0": 0.0, "points": [[0, 0, 0, 0]]},
    }))
    assert cli.main(["game", "--config", _write(tmp_path, doc)]) == 0
    rows = list(csv.DictReader(io.StringIO(capsys.readouterr().out)))
    assert float(rows[0]["V"]) == pytest.approx(0.0307, abs=5e-4)
    assert list(rows[0])[:8] == ["t", "x1", "x2", "x3", "x4", "V", "Vstar", "Vtilde"]


def test_fd_compare_columns(tmp_path, capsys):
    doc = copy.deepcopy(SMALL)
    doc["problem"]["c"] = {"type": "constant", "value": 1.0}
    doc["problem"]["sigma"] = {"type": "quadratic", "diag": [0.25, 1.0], "c0": -0.5}
    doc["problem"]["critical_point"] = [0.0, 0.0]
    doc["fd"] = {"dx": 0.05, "domain": [[-2, 2], [-2, 2]]}
    assert cli.main(["fd-compare", "--config", _write(tmp_path, doc)]) == 0
    rows = list(csv.DictReader(io.StringIO(capsys.readouterr().out)))
    assert abs(float(rows[0]["diff"])) < 0.05


def test_config_error_exit_code(tmp_path, capsys):
    assert cli.main(["value", "--config", str(tmp_path / "missing.json")]) == cli.EXIT_CONFIG
    bad = copy.deepcopy(SMALL)
    bad["problem"]["kind"] = "nonsense"
    assert cli.main(["value", "--config", _write(tmp_path, bad)]) == cli.EXIT_CONFIG
    assert "config error" in capsys.readouterr().err


def test_numerical_error_exit_code(tmp_path):
    doc = copy.deepcopy(SMALL)
    doc["query"] = {"t0": 1.0, "points": [[1.0, 0.0]]}
    assert cli.main(["value", "--config", _write(tmp_path, doc)]) == cli.EXIT_NUMERICAL


def test_game_kind_rejected_by_value(tmp_path):
    assert cli.main(["value", "--config", "example44"]) == cli.EXIT_CONFIG


def test_selftest_subset(capsys):
    assert cli.main(["selftest", "--only", "1,11"]) == 0
    out = capsys.readouterr().out
    assert out.count("[PASS]") == 2
