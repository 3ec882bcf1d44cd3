import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from sfda.cli import EXIT_INVALID, EXIT_NUMERICAL, EXIT_OK, RunConfig, main
from sfda.errors import ValidationError
from sfda.io import load_report, write_csv
from sfda.simulation import SimConfig, simulate_pair


@pytest.fixture(scope="module")
def data_csv(tmp_path_factory):
    path = tmp_path_factory.mktemp("cli") / "data.csv"
    write_csv(simulate_pair(SimConfig(n1=30, n2=25, delta=1.0), 0), path)
    return path


def test_fit_gcv_and_fixed_lambda(data_csv, tmp_path, capsys):
    assert main(["fit", "--input", str(data_csv), "--group", "1", "--gcv"]) == EXIT_OK
    doc = json.loads(capsys.readouterr().out)
    assert doc["schema"] == "1" and doc["group"] == 1 and doc["lambda"] > 0
    assert len(doc["fit"]) == len(doc["grid"]) == 101
    out = tmp_path / "fit.json"
    assert main(["fit", "--input", str(data_csv), "--group", "2", "--lambda", "0.001",
                 "--output", str(out)]) == EXIT_OK
    assert json.loads(out.read_text())["lambda"] == 0.001


def test_test_command_writes_report(data_csv, tmp_path, capsys):
    out = tmp_path / "rep.json"
    code = main(["test", "--input", str(data_csv), "--B", "40", "--seed", "3", "--output", str(out)])
    assert code == EXIT_OK
    rep = load_report(out)
    assert rep["B"] == 40 and rep["seed"] == 3
    assert (tmp_path / "rep.csv").exists()
    assert "reject=" in capsys.readouterr().err


def test_test_command_options(data_csv, capsys):
    code = main(["test", "--input", str(data_csv), "--B", "20", "--alpha", "0.1",
                 "--sparsify", "2", "3", "--paper-literal-weights", "--grid-size", "21"])
    assert code == EXIT_OK
    doc = json.loads(capsys.readouterr().out)
    assert doc["alpha"] == 0.1 and doc["paper_literal_weights"] is True
    assert len(doc["grid"]) == 21


def test_simulate_command(tmp_path):
    out = tmp_path / "sim.csv"
    code = main(["simulate", "--setting", "c2", "--n1", "15", "--n2", "15", "--nmax", "4",
                 "--delta", "0.5", "--runs", "2", "--B", "20", "--seed", "1", "--output", str(out)])
    assert code == EXIT_OK
    with open(out) as fh:
        rows = list(csv.DictReader(fh))
    assert rows[0]["setting"] == "c2" and rows[0]["runs"] == "2"
    with open(tmp_path / "sim_coverage.csv") as fh:
        assert len(list(csv.reader(fh))) == 52


@pytest.mark.parametrize(
    "argv",
    [
        ["test", "--input", "does-not-exist.csv"],
        ["test", "--input", "{data}", "--alpha", "1.5"],
        ["test", "--input", "{data}", "--B", "10"],
        ["test", "--input", "{data}", "--sparsify", "4", "2"],
        ["fit", "--input", "{data}", "--group", "1", "--lambda", "-1"],
        ["simulate", "--nmax", "1", "--runs", "1"],
    ],
)
def test_validation_exit_code(data_csv, argv, capsys):
    argv = [a.replace("{data}", str(data_csv)) for a in argv]
    assert main(argv) == EXIT_INVALID
    assert "error" in capsys.readouterr().err


def test_argparse_errors_exit_with_2():
    with pytest.raises(SystemExit) as exc:
        main(["fit", "--input", "x.csv", "--group", "3"])
    assert exc.value.code == EXIT_INVALID


def test_numerical_failure_exit_code(tmp_path, capsys):
    path = tmp_path / "flat.csv"
    path.write_text("group,subject,t,y\n1,a,0.5,1\n1,b,0.5,2\n2,c,0.1,1\n2,d,0.7,3\n2,d,0.9,1\n")
    assert main(["test", "--input", str(path), "--B", "20"]) == EXIT_NUMERICAL
    assert "numerical" in capsys.readouterr().err


def test_run_config_validation():
    RunConfig(command="simulate").validate()
    for bad in (dict(command="plot"), dict(command="test"), dict(command="test", input_path="x", m=9),
                dict(command="test", input_path="x", sparsify=(0, 3))):
        with pytest.raises(ValidationError):
            RunConfig(**bad).validate()


def test_reports_identical_across_thread_counts(data_csv, tmp_path):
    outputs = []
    for threads in ("1", "3"):
        out = tmp_path / f"r{threads}.json"
        env = {"SFDA_THREADS": threads, "PATH": "/usr/bin:/bin:/usr/local/bin"}
        subprocess.run(
            [sys.executable, "-m", "sfda.cli", "test", "--input", str(data_csv), "--B", "120",
             "--seed", "5", "--output", str(out)],
            check=True, env=env, capture_output=True,
        )
        outputs.append((out.read_bytes(), out.with_suffix(".csv").read_bytes()))
    assert outputs[0] == outputs[1]


def test_console_script_help():
    res = subprocess.run(["sfda", "--help"], capture_output=True, text=True)
    assert res.returncode == 0 and "simulate" in res.stdout
