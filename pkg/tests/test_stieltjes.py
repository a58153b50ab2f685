import math

import numpy as np
import pytest
from scipy.integrate import quad

from dbm_edge.measures import build_discrete, delta
from dbm_edge.stieltjes import (PoleError, semicircle_density, semicircle_stieltjes, stieltjes,
                                stieltjes_deriv)


def test_delta_closed_form():
    assert stieltjes(delta(0.0), 2j) == pytest.approx(-1 / 2j)
    assert stieltjes_deriv(delta(0.0), 2j, 2) == pytest.approx(-2 / (2j) ** 3)


def test_frozen_atoms_ignored():
    mu = build_discrete([(math.inf, 0.5), (0.0, 0.5)])
    assert stieltjes(mu, 1j) == pytest.approx(0.5 * 1j)


def test_derivatives_match_finite_differences():
    mu = build_discrete([(0.3, 0.2), (-0.7, 0.5), (1.1, 0.3)])
    z, h = 0.2 + 0.4j, 1e-5
    for p in range(4):
        fd = (stieltjes_deriv(mu, z + h, p) - stieltjes_deriv(mu, z - h, p)) / (2 * h)
        assert abs(fd - stieltjes_deriv(mu, z, p + 1)) < 1e-5 * max(1, abs(fd))


def test_pole_and_order_errors():
    with pytest.raises(PoleError):
        stieltjes(delta(0.5), 0.5)
    with pytest.raises(ValueError):
        stieltjes_deriv(delta(0.0), 1j, 7)


def test_array_input():
    zs = np.array([1j, 2j])
    assert np.allclose(stieltjes(delta(0.0), zs), -1 / zs)


@pytest.mark.parametrize("t", [0.25, 1.0, 4.0])
def test_semicircle_against_quadrature(t):
    s = 2 * math.sqrt(t)
    assert quad(lambda x: semicircle_density(t, x), -s, s)[0] == pytest.approx(1.0, abs=1e-10)
    z = 0.3 + 0.5j
    re = quad(lambda x: semicircle_density(t, x) * ((x - z) ** -1).real, -s, s)[0]
    im = quad(lambda x: semicircle_density(t, x) * ((x - z) ** -1).imag, -s, s)[0]
    assert abs(semicircle_stieltjes(t, z) - complex(re, im)) < 1e-9
