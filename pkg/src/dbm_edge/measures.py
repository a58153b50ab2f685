"""Finite atomic measures on the extended real line.

A measure is a finite list of atoms with positive weights. Atoms may sit at
+inf or -inf, which is how frozen particles are represented; they carry mass
but take no part in transforms or free convolution.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

MASS_TOL = 1e-12


class MeasureError(ValueError):
    """Invalid atoms or weights."""


@dataclass(frozen=True)
class FiniteMeasure:
    """Atoms sorted by descending position.

    ``positions``/``weights`` hold the finite atoms; ``mass_plus_inf`` and
    ``mass_minus_inf`` hold the frozen mass at the two infinities.
    """

    positions: np.ndarray
    weights: np.ndarray
    mass_plus_inf: float = 0.0
    mass_minus_inf: float = 0.0
    sub_probability: bool = True

    def __post_init__(self):
        for arr in (self.positions, self.weights):
            arr.setflags(write=False)

    @property
    def finite_mass(self) -> float:
        return math.fsum(self.weights)

    @property
    def total_mass(self) -> float:
        return math.fsum([self.finite_mass, self.mass_plus_inf, self.mass_minus_inf])

    @property
    def atoms(self) -> list[tuple[float, float]]:
        out = []
        if self.mass_plus_inf > 0:
            out.append((math.inf, self.mass_plus_inf))
        out.extend(zip(self.positions.tolist(), self.weights.tolist()))
        if self.mass_minus_inf > 0:
            out.append((-math.inf, self.mass_minus_inf))
        return out

    def __len__(self):
        return len(self.positions)

    def support_bounds(self) -> tuple[float, float]:
        """(min, max) of the finite atoms."""
        if len(self.positions) == 0:
            raise MeasureError("measure has no finite atoms")
        return float(self.positions[-1]), float(self.positions[0])

    def cdf(self, y) -> np.ndarray:
        """mu((-inf, y]) over the finite atoms."""
        asc = self.positions[::-1]
        cw = np.concatenate([[0.0], np.cumsum(self.weights[::-1])])
        return cw[np.searchsorted(asc, np.asarray(y, dtype=float), side="right")]

    def finite_part(self) -> "FiniteMeasure":
        return FiniteMeasure(self.positions.copy(), self.weights.copy(), 0.0, 0.0,
                             self.sub_probability)

    def scaled(self, mass_factor: float, position_factor: float) -> "FiniteMeasure":
        """Pushforward by x -> position_factor * x with weights times mass_factor.
        Only the finite part is kept."""
        if position_factor <= 0 or mass_factor <= 0:
            raise MeasureError("scale factors must be positive")
        return build_discrete(
            zip((self.positions * position_factor).tolist(), (self.weights * mass_factor).tolist()),
            sub_probability=False,
        )

    def __eq__(self, other):
        if not isinstance(other, FiniteMeasure):
            return NotImplemented
        return (np.array_equal(self.positions, other.positions)
                and np.array_equal(self.weights, other.weights)
                and self.mass_plus_inf == other.mass_plus_inf
                and self.mass_minus_inf == other.mass_minus_inf)

    __hash__ = None


def build_discrete(atoms: Iterable[tuple[float, float]], sub_probability: bool = True) -> FiniteMeasure:
    """Build a measure from (position, weight) pairs.

    Zero weights are dropped and coincident positions merged. Raises
    MeasureError on negative or non-finite weights, NaN positions, or (when
    ``sub_probability``) total mass above one.
    """
    pos, wts = [], []
    plus, minus = [], []
    for x, wgt in atoms:
        x = float(x)
        wgt = float(wgt)
        if math.isnan(x):
            raise MeasureError("atom position is NaN")
        if not math.isfinite(wgt) or wgt < 0:
            raise MeasureError(f"invalid weight {wgt!r}")
        if wgt == 0:
            continue
        if x == math.inf:
            plus.append(wgt)
        elif x == -math.inf:
            minus.append(wgt)
        else:
            pos.append(x)
            wts.append(wgt)
    p = np.asarray(pos, dtype=float)
    w = np.asarray(wts, dtype=float)
    if len(p):
        order = np.argsort(-p, kind="stable")
        p, w = p[order], w[order]
        keep = np.concatenate([[True], np.diff(p) != 0])
        if not keep.all():
            idx = np.cumsum(keep) - 1
            w = np.bincount(idx, weights=w)
            p = p[keep]
    mu = FiniteMeasure(p, w, math.fsum(plus), math.fsum(minus), sub_probability)
    if sub_probability and mu.total_mass > 1 + MASS_TOL:
        raise MeasureError(f"total mass {mu.total_mass!r} exceeds 1")
    return mu


def empirical(points: Sequence[float], n: int | None = None) -> FiniteMeasure:
    """Empirical measure (1/n) sum delta_{x_i}; infinite entries become frozen mass."""
    points = np.asarray(points, dtype=float)
    n = len(points) if n is None else n
    return build_discrete(((x, 1.0 / n) for x in points))


def delta(position: float = 0.0, mass: float = 1.0) -> FiniteMeasure:
    return build_discrete([(position, mass)])


def uniform_atoms(n_atoms: int, lo: float = -1.0, hi: float = 0.0) -> FiniteMeasure:
    """Quantile atomization of the uniform density on [lo, hi] (mass hi-lo)."""
    if n_atoms < 1:
        raise MeasureError("atomization level must be positive")
    width = hi - lo
    pos = hi - width * (np.arange(n_atoms) + 0.5) / n_atoms
    return FiniteMeasure(pos, np.full(n_atoms, width / n_atoms), 0.0, 0.0, width <= 1 + MASS_TOL)


def gauss_atoms(lo: float = -1.0, hi: float = 0.0, panels: int = 64, order: int = 16,
                levels: int = 14, ratio: float = 0.25) -> FiniteMeasure:
    """Atomization of the uniform density on [lo, hi] by composite
    Gauss-Legendre nodes, with panels refined geometrically toward both ends.

    Weights are positive and sum to hi - lo. For z at distance d from the
    interval the Stieltjes transform error decays like exp(-c order) once
    the panels next to z are narrower than d, so a few thousand atoms give
    near machine precision where a quantile atomization needs ~1e6.
    """
    width = hi - lo
    inner = np.linspace(0.0, 1.0, panels + 1)
    h = 1.0 / panels
    near = h * ratio ** np.arange(1, levels + 1)
    cuts = np.unique(np.concatenate([inner, near, 1.0 - near]))
    nodes, wts = np.polynomial.legendre.leggauss(order)
    a, b = cuts[:-1, None], cuts[1:, None]
    pos = (a + b) / 2 + (b - a) / 2 * nodes[None, :]
    wt = (b - a) / 2 * wts[None, :]
    return build_discrete(zip((lo + width * pos).ravel().tolist(), (width * wt).ravel().tolist()),
                          sub_probability=width <= 1 + MASS_TOL)


def inverted_cdf(mu: FiniteMeasure, y) -> np.ndarray:
    """gamma(y) = sup{g : mu([g, inf)) >= y}.

    +inf for y at or below the mass at +inf (in particular y <= 0); -inf for
    y above the mass carried by (-inf, inf].
    """
    y = np.atleast_1d(np.asarray(y, dtype=float))
    out = np.empty_like(y)
    above = mu.mass_plus_inf + np.cumsum(mu.weights)
    # tolerate accumulated rounding in the cumulative weights
    slack = 4 * np.finfo(float).eps * np.maximum(1.0, above)
    idx = np.searchsorted(above + slack, y, side="left")
    top = y <= mu.mass_plus_inf
    out[top] = math.inf
    rest = ~top
    inside = rest & (idx < len(above))
    out[inside] = mu.positions[idx[inside]]
    out[rest & ~inside] = -math.inf
    return out


def classical_locations(mu: FiniteMeasure, n: int) -> np.ndarray:
    """gamma_j = gamma((j - 1/2)/n) for j = 1..floor(A n), A the total mass."""
    count = int(math.floor(mu.total_mass * n + 1e-9))
    j = np.arange(1, count + 1)
    return inverted_cdf(mu, (j - 0.5) / n)


def _levy_ok(xa, ca, xb, cb, a) -> bool:
    """Check F_b(y) <= F_a(y + a) + a for all y; x ascending, c the CDF
    values just right of each atom."""
    def F(xs, cs, y, strict):
        i = np.searchsorted(xs, y, side="left" if strict else "right")
        return np.where(i > 0, cs[np.maximum(i - 1, 0)], 0.0)

    # sup of F_b(y) - F_a(y+a) is attained at atoms of b or just below
    # (atom of a) - a
    cand = F(xb, cb, xb, False) - F(xa, ca, xb + a, False)
    y2 = xa - a
    cand2 = F(xb, cb, y2, True) - F(xa, ca, xa, True)
    worst = max(cand.max(initial=-1.0), cand2.max(initial=-1.0))
    return worst <= a + 1e-15


def levy_distance(mu: FiniteMeasure, nu: FiniteMeasure, tol: float = 1e-10) -> float:
    """Levy distance between the finite parts of two measures.

    The infimum over a of the two-sided sandwich condition is found by
    bisection; for fixed a the condition is checked exactly at the jump
    points of the step functions.
    """
    xa = mu.positions[::-1].copy()
    ca = np.cumsum(mu.weights[::-1])
    xb = nu.positions[::-1].copy()
    cb = np.cumsum(nu.weights[::-1])

    def ok(a):
        return _levy_ok(xa, ca, xb, cb, a) and _levy_ok(xb, cb, xa, ca, a)

    hi = max(mu.finite_mass, nu.finite_mass, 1e-300)
    lo = 0.0
    if ok(lo):
        return 0.0
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if ok(mid):
            hi = mid
        else:
            lo = mid
    return hi


def levy_distance_to_cdf(mu: FiniteMeasure, cdf, tol: float = 1e-10) -> float:
    """Levy distance between the finite part of ``mu`` and a continuous
    distribution function ``cdf`` (vectorised, non-decreasing).

    With G the step function of mu, the sandwich F(x-a) - a <= G(x) <= F(x+a) + a
    only has to be checked at the atoms x_k: G(x_k) <= F(x_k + a) + a and
    G(x_k-) >= F(x_k - a) - a, plus G = mass >= F - a to the right of all atoms.
    """
    xs = mu.positions[::-1].copy()
    right = np.cumsum(mu.weights[::-1])
    left = np.concatenate([[0.0], right[:-1]])
    total = right[-1] if len(right) else 0.0

    def ok(a):
        if np.any(right > cdf(xs + a) + a + 1e-15):
            return False
        if np.any(left < cdf(xs - a) - a - 1e-15):
            return False
        return bool(total >= float(np.max(cdf(np.array([xs[-1] + 1e3 + a])))) - a - 1e-15)

    lo, hi = 0.0, max(1.0, total)
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if ok(mid):
            hi = mid
        else:
            lo = mid
    return hi


def _fmt(x: float) -> str:
    if x == math.inf:
        return "inf"
    if x == -math.inf:
        return "-inf"
    return format(x, ".17g")


def write_csv(mu: FiniteMeasure, path) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["position", "weight"])
        for x, wgt in mu.atoms:
            wr.writerow([_fmt(x), _fmt(wgt)])


def read_csv(path, sub_probability: bool = True) -> FiniteMeasure:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if rows and set(rows[0]) != {"position", "weight"}:
        raise MeasureError("expected columns position,weight")
    return build_discrete(((float(r["position"]), float(r["weight"])) for r in rows), sub_probability)
