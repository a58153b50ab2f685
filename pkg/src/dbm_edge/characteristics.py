"""Characteristic flow of the free convolution near the right edge.

For u in Lambda_t the characteristic z_t(u) = u - t m0(u) carries m_t along:
m_t(z_t(u)) = m0(u). Writing z_t = E_t + kappa_t + i eta_t, the edge-relative
coordinates (kappa, eta) are what the rigidity bounds are phrased in.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .freeconv import DomainError, FreeConvolution
from .measures import FiniteMeasure
from .stieltjes import stieltjes

VIOLATION_TOL = 1e-9


@dataclass(frozen=True)
class RigidityProfile:
    """Constants of the square-root lower-bound assumption
    mu0([-x, 0]) >= b x^{3/2} for eta_star <= x <= T^2, and the derived
    profile f(t).

    ``floor_log_power`` sets the floor ((log n)^{p/2} n^{-1/3})^2 of f; the
    default p = 15 is the asymptotic value. At desk sizes that floor
    exceeds every other scale, so experiments may lower it.
    """

    b: float
    T: float
    eta_star: float
    n: int
    floor_log_power: float = 15.0

    def __post_init__(self):
        if not 0 < self.b < 1:
            raise ValueError("b must lie in (0, 1)")
        if self.T < 100:
            raise ValueError("T must be at least 100")
        if not 0 < self.eta_star < 0.25:
            raise ValueError("eta_star must lie in (0, 1/4)")
        if self.n < 2:
            raise ValueError("n must be at least 2")

    @property
    def C(self) -> float:
        return 2.0**21 / self.b**2

    @property
    def c(self) -> float:
        return self.b * self.C**-1.5

    @property
    def M(self) -> float:
        return 6.0 * (self.T + self.C**2 * self.eta_star)

    @property
    def t_star(self) -> float:
        """C sqrt(eta_star), where f starts to decrease."""
        return self.C * math.sqrt(self.eta_star)

    @property
    def floor(self) -> float:
        return (math.log(self.n) ** (self.floor_log_power / 2) * self.n ** (-1.0 / 3)) ** 2

    def f(self, t):
        t = np.asarray(t, dtype=float)
        ts = self.t_star
        lin = ts - self.c * np.maximum(0.0, t - ts) / 8.0
        out = np.maximum(lin, math.sqrt(self.floor)) ** 2
        return float(out) if out.ndim == 0 else out


def f_profile(profile: RigidityProfile, t):
    return profile.f(t)


def check_assumption(mu0: FiniteMeasure, profile: RigidityProfile) -> dict:
    """Check mu0([-x, 0]) >= b x^{3/2} on [eta_star, T^2] and supp mu0 in [-inf, 0].

    The ratio mu0([-x,0]) / x^{3/2} is smallest at the interval ends or just
    below an atom, so only those points are examined.
    """
    if mu0.mass_plus_inf > 0 or (len(mu0) and mu0.positions[0] > 0):
        return {"holds": False, "reason": "support not contained in [-inf, 0]", "worst_ratio": None}
    lo, hi = profile.eta_star, profile.T**2
    # positions descending <=> distances from 0 ascending
    d_asc = -mu0.positions
    cum = np.cumsum(mu0.weights)

    def mass_within(x, strict=False):
        i = np.searchsorted(d_asc, x, side="left" if strict else "right")
        return 0.0 if i == 0 else float(cum[i - 1])

    pts = [(lo, False), (hi, False)]
    pts += [(d, True) for d in d_asc if lo < d <= hi]
    worst = math.inf
    for x, strict in pts:
        worst = min(worst, mass_within(x, strict) / x**1.5)
    return {"holds": bool(worst >= profile.b), "worst_ratio": worst, "reason": ""}


class FlowFamily:
    """mu0 with cached free convolutions at the times it is queried at."""

    def __init__(self, mu0: FiniteMeasure):
        self.mu0 = mu0
        self.finite = mu0.finite_part()
        self._fc = lru_cache(maxsize=1024)(lambda t: FreeConvolution(mu0, t))

    def at(self, t: float) -> FreeConvolution:
        return self._fc(float(t))

    def edge(self, t: float) -> float:
        return self.at(t).edge_right

    def m0(self, u: complex) -> complex:
        return complex(stieltjes(self.finite, complex(u)))


@dataclass(frozen=True)
class CharacteristicPath:
    """z_s(u) = u - s m0(u) on a time grid, with kappa_s = Re z_s - E_s and
    eta_s = Im z_s."""

    u: complex
    times: np.ndarray
    z: np.ndarray
    kappa: np.ndarray
    eta: np.ndarray
    m0_u: complex

    @property
    def t(self) -> float:
        return float(self.times[-1])

    def samples(self) -> list[tuple[float, complex, float, float]]:
        return list(zip(self.times.tolist(), self.z.tolist(), self.kappa.tolist(), self.eta.tolist()))


def flow_forward(family: FlowFamily, u: complex, times, slack: float = 1e-12) -> CharacteristicPath:
    """Characteristic from u over ``times``; u must lie in the closure of
    Lambda_t for the largest time t. E_s is recomputed at every sample."""
    u = complex(u)
    times = np.atleast_1d(np.asarray(times, dtype=float))
    if np.any(times < 0):
        raise DomainError("times must be non-negative")
    t = float(times.max())
    if t > 0 and not family.at(t).in_lambda(u, slack=slack):
        raise DomainError(f"u = {u} is outside Lambda_t for t = {t}")
    m0u = family.m0(u)
    z = u - times * m0u
    edges = np.array([family.edge(s) for s in times])
    return CharacteristicPath(u, times, z, z.real - edges, z.imag, m0u)


def flow_between(z_t: complex, m_val: complex, t: float, s: float) -> complex:
    """z_s = z_t + (t - s) m_t(z_t) for 0 <= s <= t."""
    if not 0 <= s <= t:
        raise DomainError("need 0 <= s <= t")
    return complex(z_t) + (t - s) * complex(m_val)


def pull_back(family: FlowFamily, z_t: complex, t: float) -> complex:
    """u with z_t(u) = z_t."""
    z_t = complex(z_t)
    return flow_between(z_t, family.at(t).stieltjes(z_t), t, 0.0)


def domain_contains(fc: FreeConvolution, profile: RigidityProfile, z: complex) -> bool:
    """z in D_t: E_t + f(t) <= Re z <= M - 2t and
    1/((log n) n Im m_t(z)) <= Im z <= M - 2t."""
    z = complex(z)
    t = fc.t
    top = profile.M - 2 * t
    if not (fc.edge_right + profile.f(t) <= z.real <= top and 0 < z.imag <= top):
        return False
    im_m = fc.stieltjes(z).imag
    return z.imag * math.log(profile.n) * profile.n * im_m >= 1.0


def lattice_spacing(n: int) -> float:
    return float(n) ** -8


def nearest_lattice_point(u: complex, n: int) -> complex:
    """Closest point of (Z + iZ)/n^8."""
    h = lattice_spacing(n)
    return complex(round(u.real / h) * h, round(u.imag / h) * h)


@dataclass
class LatticeSample:
    points: np.ndarray
    spacing: float
    coarsening: float
    box: tuple


def lattice_points(fc0: FreeConvolution, profile: RigidityProfile, budget: int = 1_000_000,
                   box=None) -> LatticeSample:
    """Lattice points of spacing n^{-8} inside D_0, coarsened by an integer
    factor so that at most ``budget`` candidates are examined.

    ``box`` = (re_lo, re_hi, im_lo, im_hi) restricts the search; by default
    the bounding box of D_0 is used.
    """
    n = profile.n
    h = lattice_spacing(n)
    if box is None:
        top = profile.M
        box = (fc0.edge_right + profile.f(0.0), top, h, top)
    re_lo, re_hi, im_lo, im_hi = box
    if re_hi <= re_lo or im_hi <= im_lo:
        return LatticeSample(np.zeros(0, dtype=complex), h, 1.0, box)
    area_pts = ((re_hi - re_lo) / h + 1) * ((im_hi - im_lo) / h + 1)
    factor = max(1.0, math.ceil(math.sqrt(area_pts / budget)))
    step = h * factor
    re = np.arange(math.ceil(re_lo / step), math.floor(re_hi / step) + 1) * step
    im = np.arange(max(1, math.ceil(im_lo / step)), math.floor(im_hi / step) + 1) * step
    grid = (re[None, :] + 1j * im[:, None]).ravel()
    keep = np.array([domain_contains(fc0, profile, z) for z in grid], dtype=bool) if len(grid) else []
    return LatticeSample(grid[keep] if len(grid) else grid, h, factor, box)


@dataclass
class MonotonicityReport:
    checked: int = 0
    violated: int = 0
    worst_slack: float = math.inf
    hypothesis_unmet: int = 0
    by_inequality: dict = field(default_factory=dict)

    def record(self, name: str, slack: float, scale: float):
        b = self.by_inequality.setdefault(name, {"checked": 0, "violated": 0, "worst_slack": math.inf})
        b["checked"] += 1
        self.checked += 1
        rel = slack / max(1.0, scale)
        if rel < -VIOLATION_TOL:
            b["violated"] += 1
            self.violated += 1
        b["worst_slack"] = min(b["worst_slack"], rel)
        self.worst_slack = min(self.worst_slack, rel)

    def as_dict(self) -> dict:
        return {"checked": self.checked, "violated": self.violated,
                "worst_slack": self.worst_slack if self.checked else None,
                "hypothesis_unmet": self.hypothesis_unmet,
                "by_inequality": {k: dict(v) for k, v in sorted(self.by_inequality.items())}}


def admissible_path(family: FlowFamily, z_t: complex, t: float, grid_points: int = 50) -> CharacteristicPath:
    """Path through z_t at time t, sampled on an even grid of [0, t]."""
    u = pull_back(family, z_t, t)
    return flow_forward(family, u, np.linspace(0.0, t, grid_points), slack=1e-9)


def monotonicity_report(family: FlowFamily, paths, profile: RigidityProfile,
                        report: MonotonicityReport | None = None) -> MonotonicityReport:
    """Check the edge-relative monotonicity inequalities on each path's grid.

    With t the last grid time, z_s = E_s + kappa_s + i eta_s and
    q(s) = (t - s) Im m_t(z_t) kappa_t / eta_t:

    * ``kappa``:     kappa_s - kappa_t >= q(s)                  if kappa_t >= 0
    * ``sqrt_rate``: sqrt(kappa_s) - sqrt(kappa_t) >= c (t - s)/4
                                                 if kappa_t >= 0 and s >= C sqrt(eta*)
    * ``profile``:   kappa_s - f(s) >= q(s) / 2  if kappa_t >= f(t) and s >= C sqrt(eta*)

    Every check also needs kappa_s <= T^2. Paths whose terminal kappa misses a
    family's hypothesis, and grid points outside the hypotheses, are counted
    in ``hypothesis_unmet`` rather than checked. Slack is relative to
    max(1, |kappa|) and a violation means slack < -1e-9.
    """
    rep = report or MonotonicityReport()
    ts = profile.t_star
    T2 = profile.T**2
    for p in paths:
        t = p.t
        k_t, e_t = float(p.kappa[-1]), float(p.eta[-1])
        im_m = p.m0_u.imag
        f_t = profile.f(t)
        if k_t < 0:
            rep.hypothesis_unmet += 1
            continue
        for s, k_s in zip(p.times[:-1].tolist(), p.kappa[:-1].tolist()):
            if k_s > T2:
                rep.hypothesis_unmet += 1
                continue
            q = (t - s) * im_m * k_t / e_t
            scale = max(abs(k_s), abs(k_t))
            rep.record("kappa", (k_s - k_t) - q, scale)
            if s >= ts:
                rep.record("sqrt_rate", math.sqrt(max(k_s, 0.0)) - math.sqrt(k_t)
                           - profile.c * (t - s) / 4, math.sqrt(scale))
                if k_t >= f_t:
                    rep.record("profile", (k_s - profile.f(s)) - q / 2, scale)
    return rep
