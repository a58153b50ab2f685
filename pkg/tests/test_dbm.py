import math

import numpy as np
import pytest

from dbm_edge.dbm import (NoiseStream, ParticleSystem, SchemeOptions, beta_ensemble_sample, drift,
                          evolve, evolve_coupled, jitter_fan, step)

SCHEMES = ["split", "implicit", "explicit"]


def _brute_drift(x):
    n = len(x)
    return np.array([sum(1 / (x[i] - x[j]) for j in range(n) if j != i) / n for i in range(n)])


def test_drift_matches_brute_force_and_sums_to_zero():
    x = np.sort(np.random.default_rng(0).normal(size=30))[::-1]
    d = drift(ParticleSystem(x, 2.0))
    assert np.allclose(d, _brute_drift(x), rtol=1e-12)
    assert abs(d.sum()) < 1e-10


def test_frozen_particles_count_in_n_but_exert_no_force():
    s = ParticleSystem([math.inf, 1.0, 0.0, -math.inf], 2.0)
    d = drift(s)
    assert d.tolist() == [0.0, 0.25, -0.25, 0.0]
    tr = evolve(s, 0.1, 0.01, NoiseStream(1))
    assert tr.final.positions[0] == math.inf and tr.final.positions[-1] == -math.inf


def test_rejects_bad_configurations():
    with pytest.raises(ValueError):
        ParticleSystem([0.0, 1.0], 2.0)
    with pytest.raises(ValueError):
        ParticleSystem([1.0, math.inf], 2.0)
    with pytest.raises(ValueError):
        ParticleSystem([1.0, 0.0], 0.5)
    with pytest.raises(ValueError):
        SchemeOptions(scheme="rk4")


@pytest.mark.parametrize("scheme", SCHEMES)
def test_two_particle_gap_without_noise(scheme):
    # beta = inf: dg/dt = 2/(n g), so g(t)^2 = g0^2 + 4t/n
    s = ParticleSystem([0.5, -0.5], math.inf)
    tr = evolve(s, 1.0, 1e-3, NoiseStream(0), opts=SchemeOptions(scheme=scheme))
    x = tr.final.positions
    assert x[0] - x[1] == pytest.approx(math.sqrt(3.0), abs=2e-3)
    assert x.sum() == pytest.approx(0.0, abs=1e-12)


@pytest.mark.parametrize("scheme", SCHEMES)
def test_sum_of_positions_follows_the_noise(scheme):
    # the drift is antisymmetric, so sum(lambda) moves by sigma * sum(dW) exactly
    n, dt, steps = 20, 5e-3, 40
    x0 = np.linspace(1, -1, n)
    s = ParticleSystem(x0, 2.0)
    noise = NoiseStream(7, 3)
    tr = evolve(s, dt * steps, dt, noise, opts=SchemeOptions(scheme=scheme))
    dw = sum(noise.normals(n, step=k).sum() for k in range(steps)) * s.sigma * math.sqrt(dt)
    assert tr.final.positions.sum() - x0.sum() == pytest.approx(dw, abs=1e-8)
    assert np.all(np.diff(tr.final.positions) < 0)


def test_deterministic_and_stream_dependent():
    s = ParticleSystem(np.linspace(0, -1, 10), 1.0)
    a = evolve(s, 0.2, 1e-2, NoiseStream(5, 1)).final.positions
    b = evolve(s, 0.2, 1e-2, NoiseStream(5, 1)).final.positions
    c = evolve(s, 0.2, 1e-2, NoiseStream(5, 2)).final.positions
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)


def test_collapsed_start_stays_ordered():
    s = ParticleSystem(jitter_fan(0.0, 40), 2.0)
    tr = evolve(s, 0.5, 2e-3, NoiseStream(11), observe=[0.0, 0.1, 0.5])
    assert len(tr.times) == 3
    for row in tr.positions:
        assert np.all(np.diff(row) < 0)
    assert tr.positions[-1, 0] == pytest.approx(2 * math.sqrt(0.5), abs=0.5)


def test_coupled_systems_share_noise():
    a = ParticleSystem([1.0, 0.0, -1.0], 2.0)
    b = ParticleSystem([1.1, 0.1, -0.9], 2.0)
    ta, tb = evolve_coupled(a, b, 0.1, 1e-2, NoiseStream(3))
    # a shift is preserved exactly: the drift depends on differences only
    assert np.allclose(tb.final.positions - ta.final.positions, 0.1, atol=1e-10)


def test_explicit_scheme_reports_no_crossings_at_small_steps():
    s = ParticleSystem(np.linspace(1, -1, 8), 2.0)
    _, stats = step(s, 1e-4, NoiseStream(2), SchemeOptions(scheme="explicit"))
    assert stats.crossings == 0


def test_jitter_fan():
    f = jitter_fan(0.0, 5, 1e-9)
    assert f[0] == 0.0 and f[-1] == pytest.approx(-1e-9)
    assert np.all(np.diff(f) < 0)
    assert jitter_fan(2.0, 1).tolist() == [2.0]


@pytest.mark.parametrize("beta", [1.0, 2.0, 4.0])
def test_tridiagonal_single_entry_variance(beta):
    xs = np.array([beta_ensemble_sample(1, beta, NoiseStream(9, 0, k))[0] for k in range(4000)])
    assert xs.var() == pytest.approx(2 / beta, rel=0.1)


def test_tridiagonal_top_eigenvalue_near_two():
    ev = beta_ensemble_sample(400, 2.0, NoiseStream(4))
    assert np.all(np.diff(ev) <= 0)
    assert ev[0] == pytest.approx(2.0, abs=0.1)
    top = beta_ensemble_sample(400, 2.0, NoiseStream(4), top=3)
    assert np.allclose(top, ev[:3])


def test_trajectory_csv(tmp_path):
    tr = evolve(ParticleSystem([1.0, 0.0], 2.0), 0.02, 0.01, NoiseStream(0))
    path = tmp_path / "t.csv"
    tr.write_csv(path)
    lines = path.read_text().splitlines()
    assert lines[0] == "time,index,position" and len(lines) == 1 + 2 * 2
    assert tr.metadata()["observations"] == 2
