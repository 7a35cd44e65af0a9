import csv
import json

import pytest

from marcq.cli import SIMULATE_COLUMNS, SWEEP_COLUMNS, VALIDATE_COLUMNS, main
from conftest import SPECS

RUNNING = str(SPECS / "running_example.json")
GOLDEN = SPECS.parent / "tests" / "golden"


def _rows(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


def test_analyze_matches_golden(tmp_path, capsys):
    assert main(["analyze", "--spec", RUNNING, "--out", str(tmp_path)]) == 0
    out = capsys.readouterr().out
    assert "lambda* = 0.9" in out
    assert "Delta(Y_d) = 0.43" in out
    assert "(1/lambda*)(1+Delta(Y_d))/(1-lambda/lambda*)" in out
    got, want = _rows(tmp_path / "analysis.csv"), _rows(GOLDEN / "running_example_analysis.csv")
    assert [r["state"] for r in got] == [r["state"] for r in want]
    for g, w in zip(got, want):
        for col in ("pi", "yd", "delta"):
            assert float(g[col]) == pytest.approx(float(w[col]), abs=1e-12)
    doc = json.loads((tmp_path / "analysis.json").read_text())
    assert doc["lambda_star"] == pytest.approx(0.9)
    man = json.loads((tmp_path / "manifest.json").read_text())
    assert len(man["spec_sha256"]) == 64 and man["seed"] == 0
    assert {"numpy", "scipy", "marcq"} <= set(man["versions"])


def test_analyze_k30_reports_state_count(tmp_path, capsys):
    assert main(["analyze", "--spec", str(SPECS / "k30_needs_3_10.json"), "--out", str(tmp_path)]) == 0
    assert "13 states" in capsys.readouterr().out


def test_analyze_closed_form_and_dump(tmp_path):
    assert main(["analyze", "--spec", RUNNING, "--out", str(tmp_path), "--closed-form-k2", "--dump-chain"]) == 0
    doc = json.loads((tmp_path / "closed_form.json").read_text())
    assert doc["max_abs_difference"] < 1e-9
    assert (tmp_path / "chain.csv").exists() and (tmp_path / "chain_states.csv").exists()


def test_closed_form_needs_k2_family(tmp_path):
    assert main(["analyze", "--spec", str(SPECS / "k4_matched.json"), "--out", str(tmp_path),
                 "--closed-form-k2"]) == 2


def test_bad_spec_exit_code(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text('{"k": 1, "classes": [{"need": 2, "prob": 1, "duration": {"type": "exp", "rate": 1}}]}')
    assert main(["analyze", "--spec", str(bad), "--out", str(tmp_path)]) == 2
    assert main(["analyze", "--spec", str(tmp_path / "missing.json"), "--out", str(tmp_path)]) == 2


def test_cap_exit_code(tmp_path):
    assert main(["analyze", "--spec", str(SPECS / "k10_matched.json"), "--full-sat", "--cap", "50",
                 "--out", str(tmp_path)]) == 3


@pytest.mark.parametrize("loads", ["", "0.5,1.0", "abc"])
def test_bad_load_grid(tmp_path, loads):
    assert main(["simulate", "--spec", RUNNING, "--loads", loads, "--out", str(tmp_path)]) == 2


def test_unknown_command_is_usage_error():
    with pytest.raises(SystemExit) as exc:
        main(["plot", "--spec", RUNNING])
    assert exc.value.code == 2


@pytest.mark.parametrize("system", ["msj", "ak", "mmsr", "coupled"])
def test_simulate_csv(tmp_path, system):
    args = ["simulate", "--spec", RUNNING, "--loads", "0.5,0.8", "--arrivals", "5000", "--reps", "2",
            "--system", system, "--out", str(tmp_path)]
    assert main(args) == 0
    rows = _rows(tmp_path / "simulate.csv")
    assert list(rows[0]) == SIMULATE_COLUMNS
    assert [float(r["lambda_over_lambda_star"]) for r in rows] == [0.5, 0.8]
    assert (rows[0]["mismatch"] != "") == (system == "coupled")
    first = (tmp_path / "simulate.csv").read_bytes()
    assert main(args) == 0
    assert (tmp_path / "simulate.csv").read_bytes() == first


def test_validate_csv(tmp_path, capsys):
    args = ["validate", "--spec", RUNNING, "--loads", "0.9,0.5", "--arrivals", "20000", "--reps", "3",
            "--out", str(tmp_path)]
    assert main(args) == 0
    rows = _rows(tmp_path / "validate.csv")
    assert list(rows[0]) == VALIDATE_COLUMNS
    assert [float(r["load"]) for r in rows] == [0.5, 0.9]
    assert rows[0]["estimator"] == "drift-cv"
    assert float(rows[1]["pred_T"]) == pytest.approx(15.8888888888889)
    assert "Spearman" in capsys.readouterr().out
    assert main(args + ["--plain"]) == 0
    assert _rows(tmp_path / "validate.csv")[0]["estimator"] == "plain"


def test_validate_mm1_gap_within_ci(tmp_path):
    args = ["validate", "--spec", str(SPECS / "mm1.json"), "--loads", "0.5,0.8", "--arrivals", "100000",
            "--out", str(tmp_path)]
    assert main(args) == 0
    for r in _rows(tmp_path / "validate.csv"):
        assert float(r["abs_gap"]) <= float(r["ci_T"])


@pytest.mark.parametrize("param,n", [("p1", 99), ("mu1", 100)])
def test_sweep_grid_sizes(tmp_path, param, n):
    args = ["sweep", "--spec", str(SPECS / "k4_matched.json"), "--sweep-param", param, "--arrivals", "1000",
            "--reps", "1", "--plain", "--out", str(tmp_path)]
    assert main(args) == 0
    rows = _rows(tmp_path / "sweep.csv")
    assert len(rows) == n
    assert list(rows[0]) == SWEEP_COLUMNS


def test_sweep_empty_grid(tmp_path):
    assert main(["sweep", "--spec", str(SPECS / "k4_matched.json"), "--points", "0", "--out", str(tmp_path)]) == 2


def test_sweep_needs_two_class_family(tmp_path):
    assert main(["sweep", "--spec", str(SPECS / "k30_needs_3_10.json"), "--out", str(tmp_path)]) == 2
