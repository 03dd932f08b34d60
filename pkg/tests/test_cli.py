import json
from pathlib import Path

import numpy as np
import pytest

from darkmkt.cli import EXIT_INVALID, EXIT_IO, EXIT_NONCONVERGED, EXIT_OK, CliError, _clean, parse_grid, run

CONFIG = str(Path(__file__).parents[1] / "configs" / "two_asset.json")


def run_json(capsys, *argv):
    assert run(list(argv)) == EXIT_OK
    return json.loads(capsys.readouterr().out)


def test_solve(capsys):
    out = run_json(capsys, "solve", "--config", CONFIG, "--scan", "16")
    np.testing.assert_allclose(out["steady_state"]["x"][0], 0.0209629727186, rtol=1e-11)
    assert out["uniqueness"]["unique"]


def test_stability(capsys):
    out = run_json(capsys, "stability", "--config", CONFIG)
    assert out["verdict"] == "stable" and len(out["spectrum"]) == 4 and len(out["d"]) == 4


def test_price_reports_both_formulas(capsys):
    out = run_json(capsys, "price", "--config", CONFIG, "--q-hat", "0.5")
    assert out["P"] == out["P_bargain"] and not out["theorem_display_agrees"]
    assert out["warnings"]


def test_limits(capsys):
    out = run_json(capsys, "limits", "--config", CONFIG, "--kind", "lambda")
    assert all(out["converged"])
    out = run_json(capsys, "limits", "--config", CONFIG, "--kind", "gamma_tilde_u")
    assert abs(out["difference"]) > 1e-6


def test_sweep_and_simulate_write_csv(tmp_path):
    sweep = tmp_path / "sweep.csv"
    assert run(["sweep", "--config", CONFIG, "--param", "lambda.2", "--grid", "0:100:5", "--out", str(sweep)]) == 0
    assert sweep.read_text().splitlines()[0] == "param_value,P_1,P_2,converged"
    traj = tmp_path / "traj.csv"
    assert run(["simulate", "--config", CONFIG, "--t-max", "0.01", "--out", str(traj)]) == 0
    assert len(traj.read_text().splitlines()) == 12


def test_abm_with_comparison(tmp_path):
    out, cmp = tmp_path / "abm.csv", tmp_path / "cmp.json"
    argv = ["abm", "--config", CONFIG, "--agents", "2000", "--t-max", "1", "--burn-in", "0.5", "--out", str(out), "--compare", str(cmp)]
    assert run(argv) == 0
    assert "sup_distance" in json.loads(cmp.read_text())


def test_report(capsys):
    assert run(["report", "--config", CONFIG]) == 0
    text = capsys.readouterr().out
    assert "(50.0031)" in text and "stability: stable" in text


def test_invalid_parameters_exit_one(tmp_path):
    bad = json.loads(open(CONFIG).read())
    bad["q"] = 2.0
    path = tmp_path / "bad.json"
    path.write_text(json.dumps(bad))
    assert run(["solve", "--config", str(path)]) == EXIT_INVALID
    path.write_text("{not json")
    assert run(["solve", "--config", str(path)]) == EXIT_INVALID


def test_bad_grid_exit_one(tmp_path):
    assert run(["sweep", "--config", CONFIG, "--param", "lambda.2", "--grid", "5:1:3", "--out", str(tmp_path / "x")]) == EXIT_INVALID
    with pytest.raises(CliError):
        parse_grid("1:2")


def test_non_convergence_exit_two():
    assert run(["solve", "--config", CONFIG, "--tol", "1e-30"]) == EXIT_NONCONVERGED


def test_io_errors_exit_three(tmp_path):
    assert run(["solve", "--config", str(tmp_path / "missing.json")]) == EXIT_IO
    assert run(["solve", "--config", CONFIG, "--out", str(tmp_path / "no" / "dir.json")]) == EXIT_IO


def test_json_nulls_for_non_finite():
    assert _clean({"a": [np.inf, np.nan, np.float64(1 / 3)]}) == {"a": [None, None, 0.333333333333]}
