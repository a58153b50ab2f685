"""Stieltjes transforms of finite measures and the semicircle law."""
from __future__ import annotations

import math

import numpy as np

from . import _kernels as K
from .measures import FiniteMeasure

MAX_DERIVATIVE = 6


class PoleError(ArithmeticError):
    """z coincides with an atom of the measure."""


def _as_arrays(mu: FiniteMeasure):
    return np.ascontiguousarray(mu.positions, dtype=float), np.ascontiguousarray(mu.weights, dtype=float)


def stieltjes_deriv(mu: FiniteMeasure, z, p: int = 0):
    """p-th derivative of m(z) = sum w/(x - z): p! sum w/(x - z)^(p+1).

    Frozen atoms at +-inf contribute nothing. Accepts a scalar or an array of
    complex points; raises PoleError if z hits an atom.
    """
    if not 0 <= p <= MAX_DERIVATIVE:
        raise ValueError(f"derivative order must be in [0, {MAX_DERIVATIVE}]")
    x, w = _as_arrays(mu)
    zs = np.atleast_1d(np.asarray(z, dtype=complex))
    out = np.empty(zs.shape, dtype=complex)
    fact = math.factorial(p)
    for i, zz in enumerate(zs.flat):
        re, im, pole = K.cauchy_sum(x, w, zz.real, zz.imag, p)
        if pole:
            raise PoleError(f"z = {zz} is an atom of the measure")
        out.flat[i] = fact * complex(re, im)
    if np.ndim(z) == 0:
        return complex(out[0])
    return out


def stieltjes(mu: FiniteMeasure, z):
    """m(z) = sum_k w_k / (x_k - z)."""
    return stieltjes_deriv(mu, z, 0)


def semicircle_density(t: float, x):
    """Density of the semicircle law of variance t: sqrt(4t - x^2)/(2 pi t)."""
    if t <= 0:
        raise ValueError("variance must be positive")
    x = np.asarray(x, dtype=float)
    return np.sqrt(np.clip(4 * t - x * x, 0.0, None)) / (2 * math.pi * t)


def semicircle_stieltjes(t: float, z):
    """Stieltjes transform of the semicircle law of variance t (upper half plane)."""
    z = np.asarray(z, dtype=complex)
    # branch chosen so that m ~ -1/z at infinity
    r = np.sqrt(z - 2 * math.sqrt(t)) * np.sqrt(z + 2 * math.sqrt(t))
    return (-z + r) / (2 * t)
