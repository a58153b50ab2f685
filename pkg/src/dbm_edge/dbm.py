"""Beta-Dyson Brownian motion with frozen particles.

    d lambda_i = sqrt(2/(beta n)) dB_i + (1/n) sum_{j != i} dt / (lambda_i - lambda_j)

Particles sitting at +inf or -inf are frozen: they never move and exert no
force, but still count in n. Increments come from a counter-based generator
keyed by (seed, stream); when a step has to be refined, the increment over
each half is drawn from the Brownian bridge, so refinement never changes the
path over the coarse step and coupled systems can share one path.

Schemes
-------
``split`` (default)
    Far-field drift (more than ``band`` ranks away) explicit, drift from the
    ``band`` nearest ranks implicit. The implicit part is the minimiser of a
    strictly convex energy on the ordering chamber, so particles can never
    cross. A step is refined while the explicit part is stiff.
``implicit``
    Fully drift-implicit Euler, same convexity argument; O(n^2) per Newton
    iteration.
``explicit``
    Euler-Maruyama, refined until every particle moves by at most 0.4 of its
    adjacent gaps; positions are re-sorted and crossings counted.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.linalg import eigvalsh_tridiagonal

from . import _io
from . import _kernels as K
from .measures import FiniteMeasure, empirical

SCHEMES = ("split", "implicit", "explicit")
MAX_DEPTH = 20
EXPLICIT_FRACTION = 0.4
JITTER_WIDTH = 1e-9


class StepFailure(RuntimeError):
    """A step could not be completed within the refinement budget."""


@dataclass(frozen=True)
class ParticleSystem:
    """Ordered configuration lambda_1 >= ... >= lambda_n at a given time."""

    positions: np.ndarray
    beta: float
    time: float = 0.0

    def __post_init__(self):
        pos = np.array(self.positions, dtype=float)
        if pos.ndim != 1 or len(pos) == 0:
            raise ValueError("positions must be a non-empty vector")
        if np.isnan(pos).any():
            raise ValueError("positions contain NaN")
        if not self.beta >= 1:
            raise ValueError("beta must be at least 1")
        fin = np.isfinite(pos)
        idx = np.nonzero(fin)[0]
        if len(idx):
            lo, hi = idx[0], idx[-1] + 1
            if not fin[lo:hi].all():
                raise ValueError("frozen particles must form a prefix (+inf) and suffix (-inf)")
            if (pos[:lo] != math.inf).any() or (pos[hi:] != -math.inf).any():
                raise ValueError("+inf only as a prefix and -inf only as a suffix")
            if (np.diff(pos[lo:hi]) >= 0).any():
                raise ValueError("finite positions must be strictly decreasing")
        pos.setflags(write=False)
        object.__setattr__(self, "positions", pos)

    @property
    def n(self) -> int:
        return len(self.positions)

    @property
    def finite_slice(self) -> slice:
        idx = np.nonzero(np.isfinite(self.positions))[0]
        if len(idx) == 0:
            return slice(0, 0)
        return slice(int(idx[0]), int(idx[-1]) + 1)

    @property
    def sigma(self) -> float:
        """Noise coefficient sqrt(2/(beta n)); zero for beta = inf."""
        return 0.0 if math.isinf(self.beta) else math.sqrt(2.0 / (self.beta * self.n))

    def empirical_measure(self) -> FiniteMeasure:
        return empirical(self.positions, self.n)

    def with_positions(self, finite: np.ndarray, time: float) -> "ParticleSystem":
        pos = np.array(self.positions)
        pos[self.finite_slice] = finite
        return ParticleSystem(pos, self.beta, time)


def jitter_fan(top: float, count: int, width: float = JITTER_WIDTH) -> np.ndarray:
    """count equispaced points descending from ``top`` over a total width
    ``width``; splits a multiple atom without moving mass above it."""
    if count == 1:
        return np.array([top])
    return top - width * np.arange(count) / (count - 1)


@dataclass(frozen=True)
class NoiseStream:
    """Counter-based Gaussian source keyed by (seed, stream_id).

    ``counter`` indexes macro steps. Within a step, node 0 gives the full
    increment and node k >= 1 the bridge draw that splits tree node k
    (children 2k and 2k+1).
    """

    seed: int
    stream_id: int = 0
    counter: int = 0

    def generator(self, step: int | None = None, node: int = 0) -> np.random.Generator:
        step = self.counter if step is None else step
        key = [self.seed & 0xFFFFFFFFFFFFFFFF, self.stream_id & 0xFFFFFFFFFFFFFFFF]
        bg = np.random.Philox(key=np.array(key, dtype=np.uint64),
                              counter=np.array([0, node, step, 0], dtype=np.uint64))
        return np.random.Generator(bg)

    def normals(self, size: int, step: int | None = None, node: int = 0) -> np.ndarray:
        return self.generator(step, node).standard_normal(size)

    def advanced(self, k: int = 1) -> "NoiseStream":
        return replace(self, counter=self.counter + k)


@dataclass
class StepStats:
    leaves: int = 0
    max_depth: int = 0
    crossings: int = 0
    full_solves: int = 0

    def merge(self, other: "StepStats"):
        self.leaves += other.leaves
        self.max_depth = max(self.max_depth, other.max_depth)
        self.crossings += other.crossings
        self.full_solves += other.full_solves


@dataclass(frozen=True)
class SchemeOptions:
    scheme: str = "split"
    band: int = 4
    stiffness: float = 0.5
    tol: float = 1e-12
    max_newton: int = 200
    # split scheme: bridge depth at which a still-stiff leaf switches to the
    # fully implicit step instead of refining further
    full_depth: int = MAX_DEPTH

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown scheme {self.scheme!r}; expected one of {SCHEMES}")
        if not 0 <= self.full_depth <= MAX_DEPTH:
            raise ValueError(f"full_depth must lie in [0, {MAX_DEPTH}]")


def drift(sys: ParticleSystem) -> np.ndarray:
    """(1/n) sum_{j != i} 1/(lambda_i - lambda_j) for finite i, 0 for frozen."""
    out = np.zeros(sys.n)
    sl = sys.finite_slice
    out[sl] = K.drift(np.ascontiguousarray(sys.positions[sl]), float(sys.n))
    return out


def _leaf(x, dw, h, n_total, opts: SchemeOptions, depth, stats):
    """Attempt one leaf step; returns new finite positions or None to refine."""
    if len(x) == 0:
        return x
    if opts.scheme == "explicit":
        disp = h * K.drift(x, n_total) + dw
        if not K.explicit_ok(x, disp, EXPLICIT_FRACTION):
            return None
        new = x + disp
        stats.crossings += int(np.count_nonzero(np.diff(new) > 0))
        return np.sort(new)[::-1]
    if opts.scheme == "split":
        stiff = K.far_stiffness(x, h, n_total, opts.band) > opts.stiffness
        if stiff and depth < opts.full_depth:
            return None
        if not stiff:
            new, ok = K.split_step(x, dw, h, n_total, opts.band, opts.tol, opts.max_newton)
            if ok:
                return new
            if depth < MAX_DEPTH:
                return None
    stats.full_solves += 1
    new, ok, _ = K.implicit_solve(x, x + dw, h, n_total, opts.tol, 4 * opts.max_newton, 12)
    return new if ok else None


def _advance(systems, dws, h, noise, step, node, depth, opts, stats):
    """Advance all systems over one tree node sharing the increments ``dws``."""
    outs = []
    for s, dw in zip(systems, dws):
        sl = s.finite_slice
        x = np.ascontiguousarray(s.positions[sl])
        new = _leaf(x, np.ascontiguousarray(dw[sl]), h, float(s.n), opts, depth, stats)
        if new is None:
            break
        outs.append(new)
    if len(outs) == len(systems):
        stats.leaves += 1
        stats.max_depth = max(stats.max_depth, depth)
        return [s.with_positions(o, s.time + h) for s, o in zip(systems, outs)]
    if depth >= MAX_DEPTH:
        raise StepFailure(f"step not resolved after {MAX_DEPTH} halvings at t = {systems[0].time}")
    z = noise.normals(systems[0].n, step, node)
    left = []
    for s, dw in zip(systems, dws):
        left.append(0.5 * dw + 0.5 * s.sigma * math.sqrt(h) * z)
    half = _advance(systems, left, 0.5 * h, noise, step, 2 * node, depth + 1, opts, stats)
    right = [dw - l for dw, l in zip(dws, left)]
    return _advance(half, right, 0.5 * h, noise, step, 2 * node + 1, depth + 1, opts, stats)


def step_many(systems, dt: float, noise: NoiseStream, opts: SchemeOptions = SchemeOptions(),
              t_end: float | None = None):
    """Advance systems of equal size by dt with shared increments.

    Uses macro-step ``noise.counter``. Returns (systems, stats).
    """
    n = systems[0].n
    if any(s.n != n for s in systems):
        raise ValueError("coupled systems must have the same number of particles")
    if dt <= 0:
        raise ValueError("dt must be positive")
    z = noise.normals(n, noise.counter, 0)
    dws = [s.sigma * math.sqrt(dt) * z for s in systems]
    stats = StepStats()
    out = _advance(list(systems), dws, dt, noise, noise.counter, 1, 0, opts, stats)
    if t_end is not None:
        out = [replace(s, time=t_end) for s in out]
    return out, stats


def step(sys: ParticleSystem, dt: float, noise: NoiseStream, opts: SchemeOptions = SchemeOptions()):
    """One macro step; returns (system, stats)."""
    (out,), stats = step_many([sys], dt, noise, opts)
    return out, stats


@dataclass
class Trajectory:
    times: np.ndarray
    positions: np.ndarray  # (len(times), n)
    beta: float
    seed: int
    stream_id: int
    dt: float
    scheme: str
    stats: StepStats = field(default_factory=StepStats)

    def at(self, k: int) -> ParticleSystem:
        return ParticleSystem(self.positions[k], self.beta, float(self.times[k]))

    @property
    def final(self) -> ParticleSystem:
        return self.at(len(self.times) - 1)

    def write_csv(self, path):
        n = self.positions.shape[1]
        rows = ((t, i + 1, self.positions[k, i]) for k, t in enumerate(self.times) for i in range(n))
        return _io.write_csv(path, ["time", "index", "position"], rows)

    def metadata(self) -> dict:
        return {"n": int(self.positions.shape[1]), "beta": self.beta, "seed": self.seed,
                "stream_id": self.stream_id, "dt": self.dt, "scheme": self.scheme,
                "observations": int(len(self.times)), "horizon": float(self.times[-1]),
                "leaves": self.stats.leaves, "max_depth": self.stats.max_depth,
                "crossings": self.stats.crossings, "full_solves": self.stats.full_solves}

    def write_metadata(self, path):
        return _io.write_json(path, self.metadata())


def _grid(t0: float, horizon: float, dt: float, observe) -> tuple[np.ndarray, set]:
    if horizon < t0:
        raise ValueError("horizon precedes the current time")
    k = int(math.floor((horizon - t0) / dt + 1e-9))
    base = t0 + dt * np.arange(k + 1)
    obs = {float(t0), float(horizon)} if observe is None else {float(t) for t in observe}
    if any(t < t0 - 1e-15 or t > horizon + 1e-15 for t in obs):
        raise ValueError("observation times must lie in [t0, horizon]")
    grid = np.unique(np.concatenate([base, sorted(obs), [horizon]]))
    # drop grid points within rounding of an observation time
    keep = [grid[0]]
    for g in grid[1:]:
        if g - keep[-1] > 1e-12 * max(1.0, abs(g)):
            keep.append(g)
        elif g in obs:
            keep[-1] = g
    return np.array(keep), obs


def evolve_many(systems, horizon: float, dt: float, noise: NoiseStream, observe=None,
                opts: SchemeOptions = SchemeOptions()):
    """Evolve systems with shared noise up to ``horizon``; observations are
    recorded at ``observe`` (default: start and horizon). Returns one
    Trajectory per system."""
    t0 = systems[0].time
    grid, obs = _grid(t0, horizon, dt, observe)
    obs_sorted = np.array(sorted(obs))
    recs = [[] for _ in systems]
    times = []
    stats = StepStats()

    def record(t, cur):
        if np.any(np.abs(obs_sorted - t) <= 1e-12 * max(1.0, abs(t))):
            times.append(t)
            for r, s in zip(recs, cur):
                r.append(np.array(s.positions))

    cur = list(systems)
    record(grid[0], cur)
    for k in range(1, len(grid)):
        cur, st = step_many(cur, grid[k] - grid[k - 1], noise.advanced(k - 1), opts, t_end=grid[k])
        stats.merge(st)
        record(grid[k], cur)
    return [Trajectory(np.array(times), np.array(r), s.beta, noise.seed, noise.stream_id, dt,
                       opts.scheme, stats) for r, s in zip(recs, systems)]


def evolve(sys: ParticleSystem, horizon: float, dt: float, noise: NoiseStream, observe=None,
           opts: SchemeOptions = SchemeOptions()) -> Trajectory:
    return evolve_many([sys], horizon, dt, noise, observe, opts)[0]


def evolve_coupled(sys_a: ParticleSystem, sys_b: ParticleSystem, horizon: float, dt: float,
                   noise: NoiseStream, observe=None, opts: SchemeOptions = SchemeOptions()):
    """Evolve two systems driven by the same Brownian motions, index by index."""
    if sys_a.beta != sys_b.beta:
        raise ValueError("coupled systems must share beta")
    if sys_a.time != sys_b.time:
        raise ValueError("coupled systems must start at the same time")
    return tuple(evolve_many([sys_a, sys_b], horizon, dt, noise, observe, opts))


def beta_ensemble_sample(n: int, beta: float, noise: NoiseStream, top: int | None = None) -> np.ndarray:
    """Eigenvalues (descending) of the tridiagonal beta-Hermite model scaled so
    the spectrum fills [-2, 2]; this is the law of the dynamics above at t = 1
    started from the origin. ``top`` limits the output to the largest values."""
    if n < 1 or not beta > 0 or math.isinf(beta):
        raise ValueError("need n >= 1 and finite beta > 0")
    g = noise.generator(noise.counter, 0)
    d = g.normal(0.0, math.sqrt(2.0), n)
    e = np.sqrt(g.chisquare(beta * np.arange(n - 1, 0, -1))) if n > 1 else np.zeros(0)
    scale = 1.0 / math.sqrt(beta * n)
    if n == 1:
        return d * scale
    if top is None:
        ev = eigvalsh_tridiagonal(d, e)
    else:
        ev = eigvalsh_tridiagonal(d, e, select="i", select_range=(n - top, n - 1))
    return ev[::-1] * scale
