"""Free convolution of a finite measure with the semicircle law.

All numerics run on the mass-normalised measure mu~(I) = mu(sqrt(A) I)/A and
are mapped back with m_t(z) = sqrt(A) m~_t(z/sqrt(A)), so sub-probability
inputs share the code path of probability measures.

Everything is built on the subordination picture: the boundary of
Lambda_t = {w : int dmu(x)/|w-x|^2 < 1/t} is the graph of v_t(u), and
M(w) = w - t m0(w) maps it onto the real axis. Along that boundary

    density      rho_t(M(w)) = Im w / (pi t)
    Hilbert      H rho_t(y)  = Re(w - y) / (pi t)
    mass below   mu_t((-inf, M(w))) = -(1/pi) Im[ int log(x - w) dmu + t m0(w)^2 / 2 ]

The last identity follows from differentiating both sides along w and gives
the distribution function in closed form, without quadrature.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from . import _io
from . import _kernels as K
from .measures import FiniteMeasure, inverted_cdf
from .stieltjes import stieltjes, stieltjes_deriv

T_DEGENERATE = 1e-14
MAX_INTERVALS = 64
CONTINUATION_STAGES = 8


class NoBracketError(RuntimeError):
    """The edge equation m0'(xi) = 1/t has no root in the search window."""


class NonConvergence(RuntimeError):
    """Newton continuation for m_t(z) did not converge."""


class DomainError(ValueError):
    """Argument outside the admissible domain (e.g. Im z <= 0)."""


@dataclass(frozen=True)
class EdgeExpansion:
    """Square-root behaviour of the density at the right edge:
    rho_t(E - x) = sqrt(A x)/pi * (1 + err(x)), |err(x)| <= x / c on (0, c]."""

    A: float
    c: float
    xi: float
    edge: float
    m0_second: float

    def leading(self, x):
        return np.sqrt(self.A * np.asarray(x, dtype=float)) / math.pi


def _edge_root(x, w, t):
    """xi > max(x) with sum w/(x-xi)^2 = 1/t, for a normalised measure."""
    top = x[0]
    lo = top + math.sqrt(w[0] * t)
    hi = top + math.sqrt(float(np.sum(w)) * t)

    def g(xi):
        return K.cauchy_sum(x, w, xi, 0.0, 1)[0]

    glo, ghi = g(lo), g(hi)
    # both bracket ends are exact roots in limiting cases (a single atom,
    # all mass in the top atom), so allow rounding at the ends
    rt = 1.0 / t
    if abs(glo - rt) <= 1e-13 * rt:
        return lo
    if abs(ghi - rt) <= 1e-13 * rt:
        return hi
    if not (glo >= rt >= ghi):
        raise NoBracketError("m0' - 1/t does not change sign right of the support")
    # a few bisection steps, then Newton on g^(-1/2) - sqrt(t), which is
    # increasing and exactly linear for a single atom
    for _ in range(8):
        mid = 0.5 * (lo + hi)
        if g(mid) > 1.0 / t:
            lo = mid
        else:
            hi = mid
    xi = 0.5 * (lo + hi)
    st = math.sqrt(t)
    for _ in range(100):
        gv = g(xi)
        g3 = K.cauchy_sum(x, w, xi, 0.0, 2)[0]
        h = gv ** -0.5 - st
        if h < 0:
            lo = xi
        else:
            hi = xi
        hp = -0.5 * gv ** -1.5 * (2.0 * g3)
        nxt = xi - h / hp if hp > 0 else 0.5 * (lo + hi)
        if not lo < nxt < hi:
            nxt = 0.5 * (lo + hi)
        if abs(nxt - xi) <= 1e-15 * max(1.0, abs(xi)):
            return nxt
        xi = nxt
    return xi


def _gaps(x, w, t):
    """Real intervals (a, b) strictly between atoms where the boundary
    height vanishes, ascending."""
    if len(x) < 2:
        return []
    d = x[:-1] - x[1:]
    # the two neighbouring atoms alone already exceed 1/t on the whole gap
    # (d**2 can underflow for nearly coincident atoms; inf means no gap)
    with np.errstate(divide="ignore"):
        bound = (np.cbrt(w[:-1]) + np.cbrt(w[1:])) ** 3 / d**2
    cand = np.nonzero(bound <= 1.0 / t)[0]
    out = []

    def G(u):
        return K.lorentz(x, w, u, 0.0)[0]

    def Gu(u):
        return K.lorentz(x, w, u, 0.0)[2]

    for k in cand:
        hi_atom, lo_atom = x[k], x[k + 1]
        eps = 1e-13 * (hi_atom - lo_atom)
        a0, b0 = lo_atom + eps, hi_atom - eps
        # G is convex between atoms; its derivative is increasing
        if Gu(a0) >= 0 or Gu(b0) <= 0:
            continue
        umin = brentq(Gu, a0, b0, xtol=1e-15 * max(1.0, abs(a0)))
        if G(umin) > 1.0 / t:
            continue
        f = lambda u: G(u) - 1.0 / t  # noqa: E731
        a = brentq(f, a0, umin, xtol=1e-15 * max(1.0, abs(a0)))
        b = brentq(f, umin, b0, xtol=1e-15 * max(1.0, abs(b0)))
        out.append((a, b))
    out.sort()
    return out


@dataclass
class FreeConvolution:
    """mu0 boxplus semicircle of variance t, for the finite part of mu0."""

    mu0: FiniteMeasure
    t: float
    grid_per_interval: int = 96
    mass: float = field(init=False)
    scale: float = field(init=False)
    xi_plus: float = field(init=False)
    edge_right: float = field(init=False)
    xi_minus: float = field(init=False)
    edge_left: float = field(init=False)
    truncated: bool = field(init=False, default=False)

    def __post_init__(self):
        if self.t < 0:
            raise DomainError("t must be non-negative")
        fin = self.mu0.finite_part()
        if len(fin) == 0:
            raise DomainError("measure has no finite atoms")
        self.mass = fin.finite_mass
        self.scale = math.sqrt(self.mass)
        self._x = np.ascontiguousarray(fin.positions / self.scale)
        self._w = np.ascontiguousarray(fin.weights / self.mass)
        self._fin = fin
        self._cache = None
        if self.degenerate:
            self.xi_plus = self.edge_right = float(fin.positions[0])
            self.xi_minus = self.edge_left = float(fin.positions[-1])
            self._u_gaps = []
            return
        t = self.t
        xi = _edge_root(self._x, self._w, t)
        m = K.cauchy_sum(self._x, self._w, xi, 0.0, 0)[0]
        self.xi_plus = self.scale * xi
        self.edge_right = self.scale * (xi - t * m)
        xr = np.ascontiguousarray(-self._x[::-1])
        wr = np.ascontiguousarray(self._w[::-1])
        xl = _edge_root(xr, wr, t)
        ml = K.cauchy_sum(xr, wr, xl, 0.0, 0)[0]
        self.xi_minus = -self.scale * xl
        self.edge_left = -self.scale * (xl - t * ml)
        self._u_gaps = _gaps(self._x, self._w, t)
        self.truncated = len(self._u_gaps) + 1 > MAX_INTERVALS

    # -- basic quantities -------------------------------------------------
    @property
    def degenerate(self) -> bool:
        return self.t <= T_DEGENERATE

    @property
    def vtol(self) -> float:
        return 1e-12 * max(1.0, math.sqrt(self.t))

    def support_intervals(self) -> list[tuple[float, float]]:
        """Support of mu_t as ascending intervals (at most MAX_INTERVALS)."""
        if self.degenerate:
            return [(float(p), float(p)) for p in self._fin.positions[::-1]][:MAX_INTERVALS]
        us = [self.xi_minus / self.scale]
        for a, b in self._u_gaps:
            us.extend([a, b])
        us.append(self.xi_plus / self.scale)
        ys = []
        for u in us:
            ys.append(self.scale * K.boundary_point(self._x, self._w, self.t, u, self.vtol)[1])
        ys[0], ys[-1] = self.edge_left, self.edge_right
        out = [(ys[2 * i], ys[2 * i + 1]) for i in range(len(ys) // 2)]
        return out[:MAX_INTERVALS]

    def boundary_height(self, u):
        """v_t(u) = inf{v >= 0 : int dmu/((u-x)^2+v^2) <= 1/t}."""
        u = np.asarray(u, dtype=float)
        if self.degenerate:
            return np.zeros_like(u) if u.ndim else 0.0
        s = self.scale
        f = np.vectorize(lambda uu: s * K.boundary_height(self._x, self._w, self.t, uu / s, self.vtol))
        out = f(u)
        return float(out) if u.ndim == 0 else out

    def forward_map(self, w):
        """M(w) = w - t m0(w)."""
        if self.degenerate:
            return w
        return np.asarray(w) - self.t * stieltjes(self._fin, w)

    def in_lambda(self, w, slack: float = 0.0) -> bool:
        """w in Lambda_t (its closure up to relative ``slack``)."""
        w = complex(w)
        if w.imag <= 0:
            return False
        g = K.lorentz(self._fin.positions, self._fin.weights, w.real, w.imag**2)[0]
        return g * self.t < 1.0 + slack

    # -- boundary table -----------------------------------------------------
    def _table(self):
        if self._cache is None:
            lo, hi = self.xi_minus / self.scale, self.xi_plus / self.scale
            pieces = [lo]
            for a, b in self._u_gaps:
                pieces.extend([a, b])
            pieces.append(hi)
            k = self.grid_per_interval
            # cosine spacing clusters nodes at the square-root edges
            th = 0.5 * (1 - np.cos(np.linspace(0.0, math.pi, k)))
            us = []
            for i in range(0, len(pieces), 2):
                a, b = pieces[i], pieces[i + 1]
                us.append(a + (b - a) * th)
                if i + 2 < len(pieces):
                    c = pieces[i + 2]
                    us.append(np.linspace(b, c, 5)[1:-1])
            us = np.unique(np.concatenate(us))
            v, y, f = K.boundary_table(self._x, self._w, self.t, us, self.vtol)
            y = np.maximum.accumulate(y)
            f = np.minimum.accumulate(f)
            self._cache = (us, v, y, f)
        return self._cache

    def _solve_y(self, ys):
        """u with Re M(u + i v_t(u)) = y, normalised units."""
        us, _v, yt, _f = self._table()
        idx = np.clip(np.searchsorted(yt, ys), 1, len(us) - 1)
        ulo, uhi = us[idx - 1], us[idx]
        utol = 1e-15 * max(1.0, float(np.max(np.abs(us))))
        return K.solve_batch(0, self._x, self._w, self.t, np.ascontiguousarray(ys, dtype=float),
                             np.ascontiguousarray(ulo), np.ascontiguousarray(uhi), self.vtol, utol)

    def _solve_mass(self, qs):
        """u with mu~_t([M(u + i v), inf)) = q, normalised units."""
        us, _v, _y, ft = self._table()
        # ft is decreasing in u
        idx = np.clip(len(ft) - np.searchsorted(ft[::-1], qs, side="left"), 1, len(us) - 1)
        ulo, uhi = us[idx - 1], us[idx]
        utol = 1e-15 * max(1.0, float(np.max(np.abs(us))))
        return K.solve_batch(1, self._x, self._w, self.t, -np.ascontiguousarray(qs, dtype=float),
                             np.ascontiguousarray(ulo), np.ascontiguousarray(uhi), self.vtol, utol)

    # -- density, distribution, quantiles ------------------------------------
    def boundary_preimage(self, y):
        """Boundary point w(y) = u + i v_t(u) with M(w) = y, original units."""
        y = np.atleast_1d(np.asarray(y, dtype=float))
        s = self.scale
        u = self._solve_y(y / s)
        v = np.array([K.boundary_height(self._x, self._w, self.t, uu, self.vtol) for uu in u])
        return s * (u + 1j * v)

    def density(self, y):
        """rho_t(y); zero outside [edge_left, edge_right]."""
        y = np.asarray(y, dtype=float)
        flat = np.atleast_1d(y).astype(float)
        out = np.zeros_like(flat)
        if not self.degenerate:
            inside = (flat > self.edge_left) & (flat < self.edge_right)
            if inside.any():
                w = self.boundary_preimage(flat[inside])
                out[inside] = w.imag / (math.pi * self.t)
        return float(out[0]) if y.ndim == 0 else out

    def hilbert(self, y):
        """H rho_t(y) = Re(w(y) - y)/(pi t) for y inside the support hull."""
        y = np.asarray(y, dtype=float)
        w = self.boundary_preimage(y)
        out = (w.real - np.atleast_1d(y)) / (math.pi * self.t)
        return float(out[0]) if y.ndim == 0 else out

    def mass_above(self, y):
        """mu_t([y, inf))."""
        y = np.asarray(y, dtype=float)
        flat = np.atleast_1d(y).astype(float)
        if self.degenerate:
            asc = self._fin.positions[::-1]
            cw = np.concatenate([np.cumsum(self._fin.weights[::-1])[::-1], [0.0]])
            out = cw[np.searchsorted(asc, flat, side="left")]
        else:
            out = np.where(flat <= self.edge_left, self.mass, 0.0)
            inside = (flat > self.edge_left) & (flat < self.edge_right)
            if inside.any():
                u = self._solve_y(flat[inside] / self.scale)
                vals = np.array([K.mass_above(self._x, self._w, self.t, uu, self.vtol) for uu in u])
                out[inside] = self.mass * vals
        return float(out[0]) if y.ndim == 0 else out

    def cdf(self, y):
        """mu_t((-inf, y])."""
        return self.mass - self.mass_above(y)

    def quantile(self, q):
        """Inverted distribution function gamma_t(q) = sup{g : mu_t([g, inf)) >= q}."""
        q = np.asarray(q, dtype=float)
        flat = np.atleast_1d(q).astype(float)
        if self.degenerate:
            out = inverted_cdf(self._fin, flat)
        else:
            out = np.empty_like(flat)
            out[flat <= 0] = math.inf
            out[flat > self.mass * (1 + 1e-14)] = -math.inf
            mid = (flat > 0) & (flat <= self.mass * (1 + 1e-14))
            if mid.any():
                qq = np.minimum(flat[mid] / self.mass, 1.0)
                u = self._solve_mass(qq)
                ys = np.array([K.boundary_point(self._x, self._w, self.t, uu, self.vtol)[1] for uu in u])
                out[mid] = self.scale * ys
        return float(out[0]) if q.ndim == 0 else out

    def classical_locations(self, n: int) -> np.ndarray:
        """gamma_t((j - 1/2)/n), j = 1..floor(A n)."""
        count = int(math.floor(self.mass * n + 1e-9))
        return self.quantile((np.arange(1, count + 1) - 0.5) / n)

    # -- Stieltjes transform --------------------------------------------------
    def subordinate(self, z):
        """w in Lambda_t with w - t m0(w) = z."""
        z = complex(z)
        if z.imag <= 0:
            raise DomainError("Im z must be positive")
        if self.degenerate:
            return z
        s = self.scale
        zr, zi = z.real / s, z.imag / s
        tol = 1e-12 * (1.0 + abs(complex(zr, zi)))
        wr, wi, ok = K.subordinate(self._x, self._w, self.t, zr, zi, tol, CONTINUATION_STAGES)
        if not ok:
            raise NonConvergence(f"continuation stalled at z = {z}")
        return s * complex(wr, wi)

    def stieltjes(self, z):
        """m_t(z) = m0(w(z)) for Im z > 0."""
        zs = np.atleast_1d(np.asarray(z, dtype=complex))
        out = np.empty(zs.shape, dtype=complex)
        for i, zz in enumerate(zs.flat):
            if self.degenerate:
                if zz.imag <= 0:
                    raise DomainError("Im z must be positive")
                out.flat[i] = stieltjes(self._fin, zz)
            else:
                out.flat[i] = stieltjes(self._fin, self.subordinate(zz))
        return complex(out[0]) if np.ndim(z) == 0 else out

    # -- edge ---------------------------------------------------------------
    def edge_expansion(self) -> EdgeExpansion:
        if self.degenerate:
            raise DomainError("edge expansion needs t > 0")
        t, xi = self.t, self.xi_plus
        m2 = stieltjes_deriv(self._fin, xi, 2).real
        return EdgeExpansion(A=2.0 / (-t**3 * m2), c=-(2.0**-9) * t * m2 * xi**2,
                             xi=xi, edge=self.edge_right, m0_second=m2)

    # -- export ---------------------------------------------------------------
    def density_grid(self, points: int = 401) -> np.ndarray:
        """Odd-sized grid over the support hull, symmetric about its midpoint."""
        if points < 3:
            raise ValueError("need at least three grid points")
        if points % 2 == 0:
            points += 1
        mid = 0.5 * (self.edge_left + self.edge_right)
        half = 0.5 * (self.edge_right - self.edge_left)
        return mid + half * np.linspace(-1.0, 1.0, points)

    def write_density_csv(self, path, points: int = 401):
        ys = self.density_grid(points)
        rho = self.density(ys)
        cdf = self.cdf(ys)
        return _io.write_csv(path, ["y", "rho", "cdf"], zip(ys, rho, cdf))

    def edge_summary(self) -> dict:
        out = {"t": self.t, "mass": self.mass,
               "xi_plus": self.xi_plus, "edge_right": self.edge_right,
               "xi_minus": self.xi_minus, "edge_left": self.edge_left,
               "support_intervals": [list(p) for p in self.support_intervals()],
               "intervals_truncated": self.truncated}
        if not self.degenerate:
            ex = self.edge_expansion()
            out.update({"A": ex.A, "c": ex.c, "m0_second": ex.m0_second})
        return out

    def write_edge_json(self, path):
        return _io.write_json(path, self.edge_summary())


# Function-style entry points --------------------------------------------------

def free_convolution(mu0: FiniteMeasure, t: float) -> FreeConvolution:
    return FreeConvolution(mu0, t)


def right_edge(fc: FreeConvolution) -> tuple[float, float]:
    return fc.xi_plus, fc.edge_right


def left_edge(fc: FreeConvolution) -> tuple[float, float]:
    return fc.xi_minus, fc.edge_left


def boundary_height(fc: FreeConvolution, u):
    return fc.boundary_height(u)


def forward_map(fc: FreeConvolution, w):
    return fc.forward_map(w)


def density(fc: FreeConvolution, y):
    return fc.density(y)


def stieltjes_fc(fc: FreeConvolution, z):
    return fc.stieltjes(z)


def edge_expansion(fc: FreeConvolution) -> EdgeExpansion:
    return fc.edge_expansion()


def fc_classical_locations(fc: FreeConvolution, n: int) -> np.ndarray:
    return fc.classical_locations(n)
