import csv
import json
import math
import subprocess
import sys

import pytest

from dbm_edge.cli import SUBCOMMANDS, run
from dbm_edge.config import KEYS


def test_help_lists_subcommands_and_keys():
    out = subprocess.run([sys.executable, "-m", "dbm_edge", "--help"], capture_output=True, text=True)
    assert out.returncode == 0
    for name in SUBCOMMANDS:
        assert name in out.stdout
    for key in KEYS:
        assert key in out.stdout


def test_unknown_key_is_config_error(tmp_path):
    assert run(["rigidity", "--set", "bogus=1", "--output-dir", str(tmp_path)]) == 1


def test_missing_config_file(tmp_path):
    assert run(["rigidity", "--config", str(tmp_path / "none.json")]) == 1


def test_conflicting_experiment(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"experiment": "coupling"}))
    assert run(["rigidity", "--config", str(cfg)]) == 1


def test_freeconv_density_center(tmp_path):
    code = run(["freeconv", "--measure", "delta0", "--t", "1", "--emit-density", "--points", "401",
                "--output-dir", str(tmp_path)])
    assert code == 0
    rows = list(csv.DictReader(open(tmp_path / "density.csv")))
    mid = rows[200]
    assert float(mid["y"]) == 0.0
    assert float(mid["rho"]) == pytest.approx(1 / math.pi, abs=1e-9)
    summary = json.loads((tmp_path / "freeconv.json").read_text())
    assert summary["edge_right"] == pytest.approx(2.0, abs=1e-12)


def test_examples_uniform(tmp_path, capsys):
    code = run(["examples", "--uniform", "--t", "0.01", "--set", "n=40", "--set", "trials=1",
                "--output-dir", str(tmp_path)])
    assert code == 0
    rep = json.loads((tmp_path / "report.json").read_text())
    assert rep["experiment"] == "uniform_profile" and rep["status"] == "pass"
    checks = {c["name"]: c for c in rep["checks"]}
    assert checks["density_symmetry"]["passed"]
    assert "PASS xi_residual" in capsys.readouterr().out


def test_simulate_writes_trajectory(tmp_path):
    code = run(["simulate", "--set", "n=10", "--set", "t_grid=[0.1]", "--output-dir", str(tmp_path)])
    assert code == 0
    meta = json.loads((tmp_path / "trajectory.json").read_text())
    assert meta["n"] == 10 and meta["observations"] == 2
    assert (tmp_path / "trajectory.csv").exists()


def test_hypothesis_unmet_exit_code(tmp_path):
    code = run(["rigidity", "--set", "initial_data=atoms:0.5@1", "--set", "n=10", "--set", "trials=1",
                "--output-dir", str(tmp_path)])
    assert code == 3
