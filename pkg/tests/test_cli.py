import csv
import io
import json
import subprocess
import sys

import numpy as np
import pytest

from stdmarker import cli
from stdmarker.dataset import write_csv
from stdmarker.simgen import default_scenario, generate_sample


@pytest.fixture(scope="module")
def data_csv(tmp_path_factory):
    path = tmp_path_factory.mktemp("cli") / "study.csv"
    write_csv(generate_sample(default_scenario(), 7), path)
    return path


def run(capsys, *argv):
    code = cli.main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def test_fit_json(capsys, data_csv):
    code, out, _ = run(capsys, "fit", data_csv, "--method", "cml", "--B", 20,
                       "--roc-grid", "0.1,0.3,0.5,0.7,0.9")
    assert code == cli.EXIT_OK
    doc = json.loads(out)
    assert doc["schema_version"] == cli.SCHEMA_VERSION
    roc = [r for r in doc["rows"] if r["quantity"] == "roc"]
    assert [r["parameter"] for r in roc] == [0.1, 0.3, 0.5, 0.7, 0.9]
    truth = [0.2667, 0.5918, 0.7731, 0.8868, 0.9669]
    assert np.max(np.abs([r["estimate"] for r in roc] - np.array(truth))) < 0.08
    assert all(r["lower"] <= r["upper"] for r in doc["rows"])
    assert {r["quantity"] for r in doc["rows"]} == {"beta", "roc", "risk", "risk_cdf"}


def test_fit_is_reproducible_and_env_seed(capsys, data_csv, monkeypatch):
    args = ("fit", data_csv, "--method", "psl", "--B", 10)
    first = run(capsys, *args)[1]
    assert run(capsys, *args)[1] == first
    monkeypatch.setenv(cli.SEED_ENV, "99")
    env = json.loads(run(capsys, *args)[1])
    assert env["seed"] == 99
    assert env != json.loads(first)
    assert json.loads(run(capsys, *args, "--seed", 99)[1]) == env
    monkeypatch.setenv(cli.SEED_ENV, "x")
    assert run(capsys, *args)[0] == cli.EXIT_INPUT


def test_nonparametric_gives_roc_only(capsys, data_csv):
    code, out, _ = run(capsys, "fit", data_csv, "--method", "np", "--B", 10)
    assert code == 0
    assert {r["quantity"] for r in json.loads(out)["rows"]} == {"roc"}
    code, _, err = run(capsys, "riskdist", data_csv, "--method", "np", "--B", 0)
    assert code == cli.EXIT_INPUT and "no risk model" in err


def test_missing_file_exit_code(capsys, tmp_path):
    missing = tmp_path / "nowhere.csv"
    code, _, err = run(capsys, "fit", missing)
    assert code == cli.EXIT_INPUT
    assert str(missing) in err


def test_bad_usage(capsys, data_csv):
    assert run(capsys, "fit", data_csv, "--method", "bogus")[0] == 2
    assert run(capsys, "fit", data_csv, "--design", "case-control")[0] == cli.EXIT_INPUT


def test_csv_output(capsys, data_csv, tmp_path):
    target = tmp_path / "roc.csv"
    code, out, _ = run(capsys, "roc", data_csv, "--method", "eml", "--mode", "per-population",
                       "--B", 0, "--csv", "-o", target)
    assert code == 0 and out == ""
    rows = list(csv.DictReader(io.StringIO(target.read_text())))
    assert tuple(rows[0].keys()) == cli.FIT_COLUMNS
    assert {r["population"] for r in rows} == {"pop1", "pop2"}
    assert all(r["lower"] == "" for r in rows)


def test_standardize_and_riskdist(capsys, data_csv):
    code, out, _ = run(capsys, "standardize", data_csv)
    doc = json.loads(out)
    assert code == 0 and len(doc["rows"]) == 600
    assert all(0.0 <= r["u"] <= 1.0 for r in doc["rows"])
    code, out, _ = run(capsys, "riskdist", data_csv, "--method", "cml", "--B", 0,
                       "--y-grid", "0,1", "--p-grid", "0.2,0.5")
    rows = json.loads(out)["rows"]
    assert code == 0 and len(rows) == 8


@pytest.mark.parametrize("method", ["auc", "wilcoxon", "wald"])
def test_roc_equality_command(capsys, data_csv, method):
    code, out, _ = run(capsys, "test-roc-equality", data_csv, "--method", method, "--B", 30)
    row = json.loads(out)["rows"][0]
    assert code == 0 and 0.0 < row["p_value"] <= 1.0


def test_simulate_writes_data(capsys, tmp_path):
    data = tmp_path / "sim.csv"
    code, out, _ = run(capsys, "simulate", "--scenario", "small-n", "--data", data, "--seed", 3)
    doc = json.loads(out)
    assert code == 0 and data.exists()
    assert [r["n"] for r in doc["rows"]] == [100, 100]
    roc = [r["value"] for r in doc["truth"] if r["quantity"] == "roc" and r["population"] == "pop1"]
    assert roc == pytest.approx([0.2667, 0.5918, 0.7731, 0.8868, 0.9669], abs=1e-4)


def test_experiment_command(capsys, tmp_path):
    args = ("experiment", "--scenario", "small-n", "--reps", 3, "--methods", "cml,np",
            "--estimands", "roc", "--seed", 5)
    code, first, _ = run(capsys, *args)
    assert code == 0
    assert run(capsys, *args)[1] == first
    doc = json.loads(first)
    assert doc["reps_used"] == 3 and not doc["aborted"]
    assert "wall_clock_seconds" not in doc
    assert run(capsys, "experiment", "--scenario", tmp_path / "none.json")[0] == cli.EXIT_INPUT
    report = cli.cmd_experiment("small-n", 3, 0, 5, methods=("cml", "np"), estimands=("roc",))
    assert report.to_dict()["rows"] == doc["rows"]


def test_console_entry_point(data_csv):
    res = subprocess.run([sys.executable, "-m", "stdmarker.cli", "roc", str(data_csv), "--B", "0"],
                         capture_output=True, text=True, check=False)
    assert res.returncode == 0
    assert json.loads(res.stdout)["command"] == "roc"


def test_nonmonotone_fit_exit_code(capsys, tmp_path):
    # this data set gives a fitted G that is not nonincreasing
    path = tmp_path / "bent.csv"
    write_csv(generate_sample(default_scenario(n=267), [2013, 9, 7]), path)
    code, _, err = run(capsys, "fit", path, "--B", 0)
    assert code == cli.EXIT_NUMERICAL and "allow_nonmonotone" in err
    code, out, _ = run(capsys, "fit", path, "--B", 0, "--allow-nonmonotone")
    assert code == 0 and any(r["quantity"] == "risk_cdf" for r in json.loads(out)["rows"])
