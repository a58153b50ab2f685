import json
import math

import numpy as np
import pytest

from dbm_edge.config import resolve
from dbm_edge.harness import (EXIT_FAIL, EXIT_PASS, EXIT_UNMET, ExperimentReport, minimal_eta_star,
                              parse_measure, run_experiment, run_trials, stream_id)
from dbm_edge.measures import delta, gauss_atoms, write_csv, build_discrete


def test_stream_ids_are_distinct():
    ids = {stream_id(p, i, g) for p in range(5) for g in range(3) for i in range(100)}
    assert len(ids) == 5 * 3 * 100


@pytest.mark.parametrize("spec,mass", [("delta0", 1.0), ("delta0:0.25", 0.25), ("uniform", 1.0),
                                       ("small:0.1", 1.0), ("twoatom:0.5", 1.0),
                                       ("atoms:0@0.3,-1@0.2", 0.5)])
def test_parse_measure(spec, mass):
    init = parse_measure(spec, 40)
    assert init.measure.total_mass == pytest.approx(mass, abs=1e-12)
    p = init.particles
    assert len(p) == 40
    fin = p[np.isfinite(p)]
    assert len(fin) == round(40 * mass)
    assert np.all(np.diff(fin) < 0)
    assert np.all(p[len(fin):] == -math.inf)


def test_parse_measure_csv_and_errors(tmp_path):
    path = tmp_path / "m.csv"
    write_csv(build_discrete([(0.0, 0.5), (-1.0, 0.5)]), path)
    assert parse_measure(f"csv:{path}").measure.total_mass == 1.0
    for bad in ("delta0:2", "small:-1", "nope", "uniform:3", f"csv:{tmp_path}/none.csv"):
        with pytest.raises(ValueError):
            parse_measure(bad)


def test_delta_particles_start_at_or_below_the_atom():
    p = parse_measure("delta0", 50).particles
    assert p[0] == 0.0 and p[-1] > -1e-8


def test_run_trials_preserves_order(monkeypatch):
    monkeypatch.setenv("DBM_EDGE_THREADS", "3")
    assert run_trials(lambda k: k * k, 10) == [k * k for k in range(10)]


def test_report_status_precedence():
    rep = ExperimentReport("rigidity", {})
    rep.check("a", 1.0, 2.0, True)
    rep.check("info", 5.0, 1.0, False, verdict=False)
    assert rep.exit_code == EXIT_PASS
    rep.check("b", 3.0, 2.0, False)
    assert rep.exit_code == EXIT_FAIL
    rep.hypothesis("h", 0.1, 1.0, False)
    assert rep.exit_code == EXIT_UNMET
    assert any(line.startswith("UNMET") for line in rep.summary_lines())


def test_minimal_eta_star():
    assert minimal_eta_star(delta(0.0), 5e-7, 100.0) <= 1e-40
    eta = minimal_eta_star(gauss_atoms(), 5e-7, 100.0)
    assert 1e-13 < eta < 1e-11


def _small(exp, tmp_path, **over):
    items = [("experiment", exp), ("output_dir", str(tmp_path / exp))] + list(over.items())
    return resolve({}, [(k.replace("__", "."), v) for k, v in items])


def test_rigidity_small_run_writes_report(tmp_path):
    cfg = _small("rigidity", tmp_path, n=40, trials=3)
    rep = run_experiment(cfg)
    data = json.loads((tmp_path / "rigidity" / "report.json").read_text())
    assert data["status"] == rep.status
    assert "output_dir" not in data["config"]
    assert (tmp_path / "rigidity" / "timing.json").exists()
    for name in data["tables"].values():
        assert (tmp_path / "rigidity" / name).exists()


def test_uniform_profile_small(tmp_path):
    rep = run_experiment(_small("uniform_profile", tmp_path, n=40, trials=1, t_grid=[0.01]))
    by = {c.name: c for c in rep.checks}
    assert by["xi_residual"].passed and by["density_symmetry"].passed


def test_hypothesis_unmet_for_positive_support(tmp_path):
    cfg = _small("rigidity", tmp_path, n=20, trials=1, initial_data="atoms:0.5@1")
    assert run_experiment(cfg, write=False).exit_code == EXIT_UNMET


def test_figures_opt_in(tmp_path):
    cfg = _small("rigidity", tmp_path, n=20, trials=2, figures=True)
    rep = run_experiment(cfg)
    assert rep.figures and all(p.suffix == ".png" and p.exists() for p in map(_path, rep.figures))


def _path(p):
    from pathlib import Path
    return Path(p)
