import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.integrate import quad

from dbm_edge.freeconv import DomainError, FreeConvolution
from dbm_edge.measures import build_discrete, delta, gauss_atoms
from dbm_edge.stieltjes import semicircle_density, semicircle_stieltjes


@pytest.mark.parametrize("t", [1 / 49, 0.25, 1.0, 4.0])
def test_delta_is_semicircle(t):
    fc = FreeConvolution(delta(0.0), t)
    assert fc.edge_right == pytest.approx(2 * math.sqrt(t), rel=1e-12)
    assert fc.edge_left == pytest.approx(-2 * math.sqrt(t), rel=1e-12)
    ys = np.linspace(-1.9, 1.9, 9) * math.sqrt(t)
    assert np.allclose(fc.density(ys), semicircle_density(t, ys), rtol=1e-9, atol=1e-12)
    for z in [0.1 + 0.2j, -1.0 + 0.01j, 3j]:
        assert abs(fc.stieltjes(z) - semicircle_stieltjes(t, z)) < 1e-10


def test_delta_hilbert_transform():
    t = 1.0
    fc = FreeConvolution(delta(0.0), t)
    ys = np.array([-1.5, -0.2, 0.7])
    assert np.allclose(fc.hilbert(ys), -ys / (2 * math.pi * t), atol=1e-10)


def test_quarter_delta_edge():
    for t in (0.25, 1.0):
        fc = FreeConvolution(delta(0.0, 0.25), t)
        assert fc.edge_right == pytest.approx(math.sqrt(t), rel=1e-12)
        assert fc.mass == 0.25


@pytest.mark.parametrize("t", [0.25, 1.0, 4.0])
def test_delta_edge_expansion(t):
    ex = FreeConvolution(delta(0.0), t).edge_expansion()
    assert ex.A == pytest.approx(t**-1.5, rel=1e-12)
    assert ex.c == pytest.approx(2**-8 * math.sqrt(t), rel=1e-12)
    xs = np.linspace(ex.c / 400, ex.c / 4, 50)
    rho = semicircle_density(t, ex.edge - xs)
    err = np.abs(rho / ex.leading(xs) - 1)
    assert np.all(err <= xs / ex.c)


def test_uniform_closed_form():
    fc = FreeConvolution(gauss_atoms(), 1.0)
    xi = (math.sqrt(5) - 1) / 2
    assert fc.xi_plus == pytest.approx(xi, abs=1e-12)
    assert fc.edge_right == pytest.approx(xi - math.log(xi / (1 + xi)), abs=1e-11)
    assert fc.edge_right == pytest.approx(1.5804576, abs=1e-7)


def _random_measure(rng, k=3):
    x = rng.uniform(-2, 2, k)
    w = rng.dirichlet(np.ones(k))
    return build_discrete(zip(x, w))


@pytest.mark.parametrize("seed", [0, 1])
@pytest.mark.parametrize("t", [0.05, 1.0])
def test_cdf_against_quadrature(seed, t):
    fc = FreeConvolution(_random_measure(np.random.default_rng(seed)), t)
    lo, hi = fc.edge_left, fc.edge_right
    breaks = [p for iv in fc.support_intervals() for p in iv]
    total = sum(quad(fc.density, a, b, limit=200)[0] for a, b in fc.support_intervals())
    assert total == pytest.approx(1.0, abs=1e-7)
    for y in np.linspace(lo, hi, 7)[1:-1]:
        pts = [p for p in breaks if lo < p < y]
        exact = quad(fc.density, lo, y, points=pts or None, limit=200)[0]
        assert abs(fc.cdf(y) - exact) < 1e-7


def test_stieltjes_against_quadrature():
    fc = FreeConvolution(_random_measure(np.random.default_rng(5)), 0.5)
    z = 0.2 + 0.3j
    ivs = fc.support_intervals()
    re = sum(quad(lambda y: fc.density(y) * (1 / (y - z)).real, a, b, limit=200)[0] for a, b in ivs)
    im = sum(quad(lambda y: fc.density(y) * (1 / (y - z)).imag, a, b, limit=200)[0] for a, b in ivs)
    assert abs(fc.stieltjes(z) - complex(re, im)) < 1e-7


@settings(max_examples=20, deadline=None)
@given(st.lists(st.tuples(st.floats(-3, 3), st.floats(0.05, 1.0)), min_size=1, max_size=6),
       st.floats(0.01, 5.0))
def test_edge_equations(atoms, t):
    total = sum(w for _, w in atoms)
    mu = build_discrete([(x, w / total) for x, w in atoms])
    fc = FreeConvolution(mu, t)
    x, w = mu.positions, mu.weights
    xi = fc.xi_plus
    assert xi > x[0]
    assert t * np.sum(w / (xi - x) ** 2) == pytest.approx(1.0, rel=1e-9)
    assert fc.edge_right == pytest.approx(xi - t * np.sum(w / (x - xi)), rel=1e-9, abs=1e-12)
    assert fc.edge_left < fc.edge_right


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0.05, 0.95))
def test_quantile_inverts_mass_above(seed, q):
    fc = FreeConvolution(_random_measure(np.random.default_rng(seed), 4), 0.3)
    y = fc.quantile(q)
    assert fc.mass_above(y) == pytest.approx(q, abs=1e-9)


def test_classical_locations_monotone():
    fc = FreeConvolution(delta(0.0), 1.0)
    g = fc.classical_locations(50)
    assert len(g) == 50 and np.all(np.diff(g) < 0)
    assert np.allclose(g, -g[::-1], atol=1e-10)


def test_domain_errors():
    with pytest.raises(DomainError):
        FreeConvolution(delta(0.0), -1.0)
    with pytest.raises(DomainError):
        FreeConvolution(delta(0.0), 1.0).stieltjes(0.5)


def test_density_csv_center_row(tmp_path):
    fc = FreeConvolution(delta(0.0), 1.0)
    path = fc.write_density_csv(tmp_path / "d.csv", 401)
    rows = [line.split(",") for line in open(path).read().splitlines()[1:]]
    y, rho, _ = map(float, rows[200])
    assert y == 0.0 and rho == pytest.approx(1 / math.pi, abs=1e-9)
