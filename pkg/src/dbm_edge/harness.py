"""Desk-scale experiments for edge rigidity, universality, couplings and the
deterministic free-convolution examples.

Every experiment returns an ExperimentReport. Reports hold only quantities
that are functions of the configuration, so re-running a configuration
gives byte-identical files; wall-clock time goes to a separate timing.json.
Trials draw from independent counter-based streams and may run on worker
threads (at most DBM_EDGE_THREADS) without changing any output.
"""
from __future__ import annotations

import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.stats import ks_2samp

from . import _io
from .characteristics import (FlowFamily, MonotonicityReport, RigidityProfile, admissible_path,
                              check_assumption, domain_contains, monotonicity_report)
from .config import ExperimentConfig
from .dbm import (NoiseStream, ParticleSystem, SchemeOptions, StepFailure, beta_ensemble_sample,
                  evolve, evolve_coupled, jitter_fan)
from .freeconv import FreeConvolution
from .measures import (FiniteMeasure, build_discrete, classical_locations, delta, empirical,
                       gauss_atoms, levy_distance_to_cdf, read_csv)

EXIT_PASS, EXIT_CONFIG, EXIT_FAIL, EXIT_UNMET = 0, 1, 2, 3

# stream ids: purpose in the high bits, trial index in the low bits
SDE, REFERENCE, COUPLE_HEIGHT, COUPLE_GAP, MEASURES = range(5)


def stream_id(purpose: int, index: int, group: int = 0) -> int:
    return (purpose << 48) | (group << 24) | index


def worker_count() -> int:
    raw = os.environ.get("DBM_EDGE_THREADS", "")
    try:
        cap = int(raw)
    except ValueError:
        cap = os.cpu_count() or 1
    return max(1, cap)


def run_trials(fn, count: int) -> list:
    """fn(k) for k < count in order; StepFailure gives None."""
    def safe(k):
        try:
            return fn(k)
        except StepFailure:
            return None

    workers = min(worker_count(), count)
    if workers <= 1:
        return [safe(k) for k in range(count)]
    with ThreadPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(safe, range(count)))


# -- initial data ---------------------------------------------------------------

@dataclass(frozen=True)
class InitialData:
    """A measure together with n particles at its classical locations."""

    spec: str
    measure: FiniteMeasure
    particles: np.ndarray | None


def _fan_duplicates(locs: np.ndarray) -> np.ndarray:
    out = np.array(locs, dtype=float)
    i = 0
    while i < len(out):
        j = i
        while j + 1 < len(out) and out[j + 1] == out[i]:
            j += 1
        if j > i and math.isfinite(out[i]):
            out[i:j + 1] = jitter_fan(out[i], j - i + 1)
        i = j + 1
    return out


def _pad(locs: np.ndarray, n: int) -> np.ndarray:
    return np.concatenate([locs, np.full(n - len(locs), -math.inf)])


def parse_measure(spec: str, n: int | None = None) -> InitialData:
    """Measure specs:

    ``delta0`` or ``delta0:A``   mass A at the origin
    ``uniform``                  Lebesgue measure on [-1, 0]
    ``small:c``                  uniform probability density on [-c/2, c/2]
    ``twoatom:c``                mass 1/2 at each of -c/2 and c/2
    ``atoms:x@w,x@w,...``        explicit atoms
    ``csv:path``                 atoms from a position,weight file

    With ``n`` given, particles sit at the classical locations
    gamma_0((i - 1/2)/n); missing mass is frozen at -inf and coincident
    locations are spread by a tiny fan.
    """
    name, _, arg = spec.partition(":")
    name = name.strip().lower()
    try:
        if name == "delta0":
            mass = float(arg) if arg else 1.0
            if not 0 < mass <= 1:
                raise ValueError("mass must lie in (0, 1]")
            mu = delta(0.0, mass)
            parts = None
            if n is not None:
                parts = _pad(jitter_fan(0.0, int(math.floor(mass * n + 1e-9))), n)
            return InitialData(spec, mu, parts)
        if name == "uniform":
            if arg:
                raise ValueError("uniform takes no argument")
            parts = None if n is None else -(np.arange(1, n + 1) - 0.5) / n
            return InitialData(spec, gauss_atoms(), parts)
        if name == "small":
            c = float(arg)
            if not c > 0:
                raise ValueError("support width must be positive")
            mu = gauss_atoms(-c / 2, c / 2).scaled(1.0 / c, 1.0)
            parts = None if n is None else c * (0.5 - (np.arange(1, n + 1) - 0.5) / n)
            return InitialData(spec, mu, parts)
        if name == "twoatom":
            c = float(arg)
            if not c > 0:
                raise ValueError("atom separation must be positive")
            mu = build_discrete([(c / 2, 0.5), (-c / 2, 0.5)])
        elif name == "atoms":
            pairs = []
            for item in arg.split(","):
                x, _, w = item.partition("@")
                pairs.append((float(x), float(w)))
            mu = build_discrete(pairs)
        elif name == "csv":
            mu = read_csv(arg)
        else:
            raise ValueError(f"unknown measure {name!r}")
    except (ValueError, OSError) as exc:
        raise ValueError(f"bad measure spec {spec!r}: {exc}") from None
    parts = None
    if n is not None:
        parts = _fan_duplicates(_pad(classical_locations(mu, n), n))
    return InitialData(spec, mu, parts)


# -- reports --------------------------------------------------------------------

@dataclass
class Check:
    name: str
    value: float
    bound: float | None
    passed: bool
    verdict: bool = True  # False: reported for information only
    detail: str = ""

    def as_dict(self):
        return {"name": self.name, "value": self.value, "bound": self.bound,
                "passed": bool(self.passed), "verdict": self.verdict, "detail": self.detail}


@dataclass
class ExperimentReport:
    experiment: str
    config: dict
    tables: dict = field(default_factory=dict)  # name -> (header, rows)
    summary: dict = field(default_factory=dict)
    checks: list = field(default_factory=list)
    hypotheses: list = field(default_factory=list)  # Check objects
    failed_trials: int = 0
    wall_clock: float = 0.0
    figures: list = field(default_factory=list)
    extra: dict = field(default_factory=dict)  # raw samples for figures, not serialised

    def check(self, name, value, bound, passed, verdict=True, detail=""):
        self.checks.append(Check(name, _num(value), _num(bound), bool(passed), verdict, detail))

    def hypothesis(self, name, value, bound, holds, detail=""):
        self.hypotheses.append(Check(name, _num(value), _num(bound), bool(holds), True, detail))

    @property
    def status(self) -> str:
        if any(not h.passed for h in self.hypotheses):
            return "hypothesis_unmet"
        if any(c.verdict and not c.passed for c in self.checks):
            return "fail"
        return "pass"

    @property
    def exit_code(self) -> int:
        return {"pass": EXIT_PASS, "fail": EXIT_FAIL, "hypothesis_unmet": EXIT_UNMET}[self.status]

    def as_dict(self) -> dict:
        return {"experiment": self.experiment, "status": self.status,
                "config": self.config,
                "hypotheses": [h.as_dict() for h in self.hypotheses],
                "checks": [c.as_dict() for c in self.checks],
                "failed_trials": self.failed_trials,
                "summary": self.summary,
                "tables": {k: f"{self.experiment}_{k}.csv" for k in self.tables}}

    def summary_lines(self) -> list[str]:
        out = []
        for h in self.hypotheses:
            out.append(f"{'ok ' if h.passed else 'UNMET'} hypothesis {h.name}: {_short(h.value)}"
                       + (f" (bound {_short(h.bound)})" if h.bound is not None else ""))
        for c in self.checks:
            tag = ("PASS" if c.passed else "FAIL") if c.verdict else "info"
            out.append(f"{tag} {c.name}: {_short(c.value)}"
                       + (f" (bound {_short(c.bound)})" if c.bound is not None else ""))
        return out

    def write(self, output_dir, figures: bool = False) -> Path:
        out = Path(output_dir)
        out.mkdir(parents=True, exist_ok=True)
        for name, (header, rows) in self.tables.items():
            _io.write_csv(out / f"{self.experiment}_{name}.csv", header, rows)
        _io.write_json(out / "report.json", self.as_dict())
        _io.write_json(out / "timing.json", {"experiment": self.experiment,
                                             "wall_clock_seconds": round(self.wall_clock, 3),
                                             "workers": worker_count()})
        if figures:
            from . import plots
            self.figures = plots.render(self, out)
        return out / "report.json"


def _num(x):
    if x is None:
        return None
    if isinstance(x, (bool, np.bool_)):
        return bool(x)
    return float(x)


def _short(x):
    if x is None:
        return "-"
    if isinstance(x, bool):
        return str(x).lower()
    return format(float(x), ".6g")


def _opts(cfg: ExperimentConfig) -> SchemeOptions:
    return SchemeOptions(scheme=cfg["dbm.scheme"], band=cfg["dbm.band"], full_depth=cfg["dbm.full_depth"])


def _profile(cfg: ExperimentConfig, n: int | None = None, eta_star: float | None = None) -> RigidityProfile:
    return RigidityProfile(b=cfg["profile.b"], T=cfg["profile.T"],
                           eta_star=cfg["profile.eta_star"] if eta_star is None else eta_star,
                           n=max(2, n or cfg.n), floor_log_power=cfg["profile.floor_log_power"])


def _quantiles(vals) -> dict:
    vals = np.asarray(vals, dtype=float)
    if len(vals) == 0:
        return {}
    qs = {"min": 0.0, "q05": 0.05, "q25": 0.25, "median": 0.5, "q75": 0.75, "q95": 0.95, "max": 1.0}
    out = {k: float(np.quantile(vals, q)) for k, q in qs.items()}
    out["mean"] = float(np.mean(vals))
    out["std"] = float(np.std(vals, ddof=1)) if len(vals) > 1 else 0.0
    return out


def _evolve_trial(cfg, init: InitialData, n, beta, stream, times):
    sys = ParticleSystem(init.particles, beta, 0.0)
    obs = sorted({0.0, *times})
    return evolve(sys, max(times), cfg["dbm.dt"], NoiseStream(cfg.seed, stream), observe=obs, opts=_opts(cfg))


def _effective_profile(cfg, mu: FiniteMeasure, n: int | None = None) -> RigidityProfile | None:
    """Profile with eta* raised to the smallest value admissible for mu, or
    None if that exceeds 1/4."""
    eta = max(cfg["profile.eta_star"], minimal_eta_star(mu, cfg["profile.b"], cfg["profile.T"]) * (1 + 1e-12))
    if not eta < 0.25:
        return None
    return _profile(cfg, n, eta_star=eta)


def _check_assumption(report: ExperimentReport, mu: FiniteMeasure, cfg, label="", n=None):
    name = "density_lower_bound" + (f"[{label}]" if label else "")
    prof = _effective_profile(cfg, mu, n)
    if prof is None:
        report.hypothesis(name, None, cfg["profile.b"], False, "no admissible eta* below 1/4")
        return None
    res = check_assumption(mu, prof)
    report.hypothesis(name, res["worst_ratio"], prof.b, res["holds"], res["reason"])
    return prof


# -- experiments ----------------------------------------------------------------

def rigidity_experiment(cfg: ExperimentConfig) -> ExperimentReport:
    rep = ExperimentReport("rigidity", cfg.as_dict(include_output=False))
    n, times = cfg.n, cfg.t_grid
    init = parse_measure(cfg.initial_data, n)
    _check_assumption(rep, init.measure, cfg)
    fam = FlowFamily(init.measure)
    edges = {t: fam.edge(t) for t in times}
    e0 = float(init.measure.positions[0])
    literal = math.log(n) ** cfg["rigidity.log_power"] * n ** (-2.0 / 3)

    def trial(k):
        tr = _evolve_trial(cfg, init, n, cfg.beta, stream_id(SDE, k), times)
        return tr.times, tr.positions[:, 0]

    results = run_trials(trial, cfg.trials)
    rows, stat, stat_log, lam0 = [], [], [], []
    worst_literal = -math.inf
    for k, res in enumerate(results):
        if res is None:
            rep.failed_trials += 1
            continue
        ts, lam1 = res
        lam0.append(float(lam1[0]))
        devs = []
        for t, l1 in zip(ts[1:], lam1[1:]):
            d = l1 - edges[float(t)]
            devs.append(d)
            worst_literal = max(worst_literal, d - literal)
            rows.append((k, t, l1, edges[float(t)], n ** (2 / 3) * d, n ** (2 / 3) * d / math.log(n)))
        stat.append(n ** (2 / 3) * max(devs))
        stat_log.append(stat[-1] / math.log(n))
    rep.tables["trials"] = (["trial", "t", "lambda1", "edge", "scaled", "scaled_over_log_n"], rows)
    q = cfg["rigidity.quantile"]
    qv = float(np.quantile(stat, q)) if stat else math.inf
    rep.check("literal_bound", worst_literal + literal, literal, worst_literal <= 0,
              detail="max over trials and times of lambda_1(t) - E_t")
    rep.check("t0_below_edge", max(lam0, default=-math.inf), e0, all(l <= e0 for l in lam0))
    rep.check(f"quantile_{q:g}_scaled", qv, cfg["rigidity.cap"], qv <= cfg["rigidity.cap"])
    rep.summary = {"edges": {str(t): e for t, e in edges.items()},
                   "scaled": _quantiles(stat), "scaled_over_log_n": _quantiles(stat_log),
                   "literal_bound": literal}
    rep.extra = {"samples": {"scaled": np.array(stat)}}
    return rep


def bulk_rigidity_experiment(cfg: ExperimentConfig) -> ExperimentReport:
    rep = ExperimentReport("bulk", cfg.as_dict(include_output=False))
    times = cfg.t_grid
    rows, per_n, center_smaller = [], {}, {}
    for gi, n in enumerate(cfg["bulk.n_values"]):
        init = parse_measure(cfg.initial_data, n)
        gammas = {t: FreeConvolution(init.measure, t).classical_locations(n) for t in times}
        weights = np.minimum(np.arange(1, n + 1), n - np.arange(n)) ** (1 / 3) * n ** (2 / 3) / math.log(n)
        mid = n // 2

        def trial(k, n=n, init=init):
            tr = _evolve_trial(cfg, init, n, cfg.beta, stream_id(SDE, k, gi), times)
            return tr.times, tr.positions

        stats, wins = [], 0
        res_all = run_trials(trial, cfg.trials)
        for k, res in enumerate(res_all):
            if res is None:
                rep.failed_trials += 1
                continue
            ts, pos = res
            worst = 0.0
            center_ok = True
            for t, lam in zip(ts[1:], pos[1:]):
                dev = np.abs(lam - gammas[float(t)])
                worst = max(worst, float(np.max(weights * dev)))
                center_ok &= bool(dev[mid - 1] < dev[0])
            wins += center_ok
            stats.append(worst)
            rows.append((n, k, worst))
        per_n[n] = stats
        center_smaller[n] = wins / max(1, len(stats))
    rep.tables["trials"] = (["n", "trial", "max_rescaled_deviation"], rows)
    cap = cfg["bulk.cap"]
    worst = max((max(v) for v in per_n.values() if v), default=math.inf)
    rep.check("rescaled_deviation", worst, cap, worst <= cap)
    ns = sorted(per_n)
    fitted = [float(np.mean(per_n[n])) for n in ns]
    mono = all(b <= a for a, b in zip(fitted, fitted[1:]))
    rep.check("fitted_constant_nonincreasing", fitted[-1] - fitted[0], 0.0, mono,
              detail="mean rescaled deviation at the largest n minus at the smallest")
    for n in ns:
        rep.check(f"center_smaller_than_edge[n={n}]", center_smaller[n], 0.8,
                  center_smaller[n] >= 0.8, verdict=False)
    rep.summary = {"fitted_constant": {str(n): f for n, f in zip(ns, fitted)},
                   "rescaled_deviation": {str(n): _quantiles(per_n[n]) for n in ns}}
    return rep


def _edge_statistic_reference(cfg, beta, group):
    nr = cfg["universality.reference_n"]

    def sample(k):
        lam = beta_ensemble_sample(nr, beta, NoiseStream(cfg.seed, stream_id(REFERENCE, k, group)), top=1)
        return nr ** (2 / 3) * (2.0 - lam[0])

    return np.array(run_trials(sample, cfg["universality.reference_samples"]))


def universality_experiment(cfg: ExperimentConfig) -> ExperimentReport:
    rep = ExperimentReport("universality", cfg.as_dict(include_output=False))
    n, t = cfg.n, cfg.t_grid[-1]
    init = parse_measure(cfg.initial_data, n)
    t_min = n ** (-1 / 3 + cfg["universality.frak_a"])
    rep.hypothesis("t_at_least_min_time", t, t_min, t >= t_min)
    fc = FreeConvolution(init.measure, t)
    ex = fc.edge_expansion()
    rows, refs, sdes = [], {}, {}
    for gi, beta in enumerate(cfg["universality.betas"]):
        def trial(k, beta=beta):
            tr = _evolve_trial(cfg, init, n, beta, stream_id(SDE, k, gi), [t])
            return tr.positions[-1, 0]

        lam = run_trials(trial, cfg.trials)
        ok = [x for x in lam if x is not None]
        rep.failed_trials += len(lam) - len(ok)
        sde = n ** (2 / 3) * ex.A ** (1 / 3) * (fc.edge_right - np.array(ok))
        ref = _edge_statistic_reference(cfg, beta, gi)
        sdes[beta], refs[beta] = sde, ref
        rows += [(beta, "sde", k, v) for k, v in enumerate(sde)]
        rows += [(beta, "reference", k, v) for k, v in enumerate(ref)]
        ks = ks_2samp(sde, ref)
        cap = cfg["universality.ks_cap"]
        rep.check(f"ks_distance[beta={beta:g}]", ks.statistic, cap, ks.statistic <= cap,
                  detail=f"p-value {ks.pvalue:.6g}")
        med = float(np.median(sde))
        rep.check(f"median_positive[beta={beta:g}]", med, 0.0, med > 0)
        sub = min(100, len(sde))
        ks_sub = ks_2samp(sde[:sub], ref).statistic
        rep.check(f"ks_distance_first_{sub}[beta={beta:g}]", ks_sub, None, True, verdict=False)
        rep.summary[f"beta={beta:g}"] = {"sde": _quantiles(sde), "reference": _quantiles(ref),
                                         "ks": float(ks.statistic), "p_value": float(ks.pvalue)}
    if 1.0 in refs and 2.0 in refs:
        d = ks_2samp(refs[1.0], refs[2.0]).statistic
        rep.check("beta1_vs_beta2_distinguishable", d, 0.1, d >= 0.1, verdict=False)
    rep.tables["samples"] = (["beta", "source", "index", "statistic"], rows)
    rep.summary["A"] = ex.A
    rep.summary["edge"] = fc.edge_right
    rep.extra = {"samples": {f"sde beta={b:g}": v for b, v in sdes.items()}
                 | {f"reference beta={b:g}": v for b, v in refs.items()}}
    return rep


def _coupled_pair_height(rng, n, ell, m):
    """lambda >= lambda~ on [ell, m]; lambda has ell-1 particles at +inf and
    lambda~ has n-m particles at -inf (1-based indices)."""
    tl = np.sort(rng.uniform(-1.0, 0.0, m))[::-1]
    tilde = np.concatenate([tl, np.full(n - m, -math.inf)])
    shift = 0.05 + np.sort(rng.uniform(0.0, 0.05, m - ell + 1))[::-1]
    lam = np.full(n, math.inf)
    lam[ell - 1:m] = tl[ell - 1:m] + shift
    if n > m:
        lam[m:] = lam[m - 1] - np.cumsum(rng.uniform(0.005, 0.02, n - m))
    return lam, tilde


def _coupled_pair_gap(rng, n, ell, m):
    """Gaps of lambda dominate those of lambda~ on [ell, m]; lambda is frozen
    at +inf above ell and at -inf below m, lambda~ is all finite."""
    tilde = np.sort(rng.uniform(-1.0, 0.0, n))[::-1]
    gaps = -np.diff(tilde[ell - 1:m]) * (1.0 + rng.uniform(0.0, 0.5, m - ell))
    lam = np.full(n, math.inf)
    lam[m:] = -math.inf
    lam[ell - 1:m] = tilde[ell - 1] + np.concatenate([[0.0], -np.cumsum(gaps)])
    return lam, tilde


def coupling_experiment(cfg: ExperimentConfig) -> ExperimentReport:
    rep = ExperimentReport("coupling", cfg.as_dict(include_output=False))
    n, horizon, tol = cfg.n, cfg.t_grid[-1], cfg["coupling.tol"]
    ell, m = max(1, n // 10), n - max(0, n // 10)
    obs = np.linspace(0.0, horizon, cfg["coupling.observations"] + 1)
    rows = []
    for purpose, name, make in ((COUPLE_HEIGHT, "height", _coupled_pair_height),
                                (COUPLE_GAP, "gap", _coupled_pair_gap)):
        def trial(k, purpose=purpose, make=make, name=name):
            rng = np.random.default_rng([cfg.seed, stream_id(MEASURES, k, purpose)])
            lam, tilde = make(rng, n, ell, m)
            a = ParticleSystem(lam, cfg.beta, 0.0)
            b = ParticleSystem(tilde, cfg.beta, 0.0)
            ta, tb = evolve_coupled(a, b, horizon, cfg["dbm.dt"],
                                    NoiseStream(cfg.seed, stream_id(purpose, k)), observe=obs,
                                    opts=_opts(cfg))
            sl = slice(ell - 1, m)
            if name == "height":
                margins = (ta.positions[:, sl] - tb.positions[:, sl]).min(axis=1)
            else:
                ga = -np.diff(ta.positions[:, sl], axis=1)
                gb = -np.diff(tb.positions[:, sl], axis=1)
                margins = (ga - gb).min(axis=1)
            return margins

        margins = run_trials(trial, cfg.trials)
        worst, viol = math.inf, 0
        for k, mg in enumerate(margins):
            if mg is None:
                rep.failed_trials += 1
                continue
            hyp = mg[0]
            rep_ok = hyp >= 0
            if not rep_ok:
                rep.hypothesis(f"{name}_initial[trial={k}]", hyp, 0.0, False)
            later = float(mg[1:].min())
            worst = min(worst, later)
            viol += int(later < -tol)
            rows.append((name, k, hyp, later))
        rep.check(f"{name}_domination", worst, -tol, viol == 0,
                  detail=f"{viol} trials with a margin below -tol")
    rep.tables["trials"] = (["claim", "trial", "initial_margin", "min_margin"], rows)

    # deterministic comparison of quantiles of the free convolutions
    qrows, dviol = [], 0
    pairs = [("quarter_delta_vs_delta", delta(0.0, 0.25), delta(0.0, 1.0)),
             ("half_uniform_vs_uniform", gauss_atoms().scaled(0.5, 1.0), gauss_atoms())]
    for label, mu, mut in pairs:
        A = mu.finite_mass
        ys = A * (np.arange(1, cfg["coupling.y_points"] + 1) - 0.5) / cfg["coupling.y_points"]
        for t in [0.0] + cfg.t_grid:
            g = FreeConvolution(mu, t).quantile(ys)
            gt = FreeConvolution(mut, t).quantile(ys)
            for y, a, b in zip(ys, g, gt):
                ok = a <= b + 1e-9 * max(1.0, abs(b))
                dviol += int(not ok and t > 0)
                if t == 0 and not ok:
                    rep.hypothesis(f"quantile_order_at_0[{label}]", a - b, 0.0, False)
                qrows.append((label, t, y, a, b))
    rep.check("quantile_comparison", dviol, 0, dviol == 0)
    e_small = FreeConvolution(delta(0.0, 0.25), horizon).edge_right
    e_big = FreeConvolution(delta(0.0, 1.0), horizon).edge_right
    rep.check("edge_comparison", e_big - e_small, 0.0, e_big >= e_small, verdict=False)
    rep.tables["quantiles"] = (["pair", "t", "y", "gamma", "gamma_tilde"], qrows)
    return rep


def uniform_profile_checks(cfg: ExperimentConfig) -> ExperimentReport:
    rep = ExperimentReport("uniform_profile", cfg.as_dict(include_output=False))
    mu = gauss_atoms()
    rows, fitted, xi_res, sym_err, rho_max = [], [], [], [], []
    for t in cfg.t_grid:
        fc = FreeConvolution(mu, t)
        xi = fc.xi_plus
        res = abs(xi * xi + xi - t)
        e = fc.edge_right
        approx = (1 + math.log(1 / t)) * t
        half = 0.5 * (fc.edge_right - fc.edge_left)
        a = half * np.linspace(0.0, 1.0, cfg["uniform.grid_points"])[:-1]
        rp, rm = fc.density(-0.5 + a), fc.density(-0.5 - a)
        xi_res.append(res)
        fitted.append(abs(e - approx) / t**2)
        sym_err.append(float(np.max(np.abs(rp - rm))))
        rho_max.append(float(max(rp.max(), rm.max())))
        rows.append((t, xi, res, e, approx, fitted[-1], sym_err[-1], rho_max[-1]))
    rep.tables["edges"] = (["t", "xi", "xi_residual", "edge", "closed_form", "fitted_C",
                            "symmetry_error", "rho_max"], rows)
    xi1 = FreeConvolution(mu, 1.0).xi_plus
    rep.check("xi_residual", max(xi_res), cfg["uniform.xi_tol"], max(xi_res) <= cfg["uniform.xi_tol"])
    rep.check("xi_at_1", abs(xi1 - (math.sqrt(5) - 1) / 2), cfg["uniform.xi_tol"],
              abs(xi1 - (math.sqrt(5) - 1) / 2) <= cfg["uniform.xi_tol"])
    rep.check("edge_fitted_C", max(fitted), cfg["uniform.edge_cap"], max(fitted) <= cfg["uniform.edge_cap"])
    rep.check("density_symmetry", max(sym_err), cfg["uniform.symmetry_tol"],
              max(sym_err) <= cfg["uniform.symmetry_tol"])
    rep.check("density_at_most_one", max(rho_max), 1.0, max(rho_max) <= 1.0)

    # simulated top particle against the top classical location
    n = cfg.n
    init = parse_measure("uniform", n)
    times = cfg.t_grid
    gam1 = {t: float(FreeConvolution(mu, t).quantile(0.5 / n)) for t in times}

    def trial(k):
        tr = _evolve_trial(cfg, init, n, cfg.beta, stream_id(SDE, k), times)
        return max(abs(l1 - gam1[float(t)]) for t, l1 in zip(tr.times[1:], tr.positions[1:, 0]))

    sups = [s for s in run_trials(trial, cfg.trials) if s is not None]
    rep.failed_trials += cfg.trials - len(sups)
    t = times[-1]
    scale = t + math.log(n) * math.sqrt(t / n)
    c_fit = max(sups) / scale if sups else math.inf
    rep.check("top_particle_fitted_C", c_fit, None, True, verdict=False,
              detail="sup_s |lambda_1(s) - gamma_1(s)| / (t + log n sqrt(t/n))")
    rep.tables["top_particle"] = (["trial", "sup_deviation"], list(enumerate(sups)))
    rep.summary = {"edges": {str(r[0]): r[3] for r in rows},
                   "fitted_C_edge": max(fitted), "fitted_C_top_particle": c_fit}
    return rep


def small_support_checks(cfg: ExperimentConfig) -> ExperimentReport:
    rep = ExperimentReport("small_support", cfg.as_dict(include_output=False))
    init = parse_measure(cfg.initial_data)
    lo, hi = init.measure.support_bounds()
    c = 2 * max(abs(lo), abs(hi))
    M = cfg["small.M"]
    rows, grows = [], []
    bulk_ok = edge_ok = gap_ok = True
    worst_edge_err = 0.0
    for t in cfg.t_grid:
        st = math.sqrt(t)
        rep.hypothesis(f"sqrt_t_large[t={t:g}]", st, 25 * c * M**2, st >= 25 * c * M**2)
        fc = FreeConvolution(init.measure, t)
        err = max(abs(fc.edge_right - 2 * st), abs(fc.edge_left + 2 * st))
        worst_edge_err = max(worst_edge_err, err / (2 * c))
        cut = 2 * st * math.sqrt(1 - (2 * M) ** -2)
        ys = np.linspace(-cut, cut, cfg["small.grid_points"])
        rho = fc.density(ys)
        sc = np.sqrt(np.maximum(4 * t - ys**2, 0.0)) / (2 * math.pi * t)
        b_ok = bool(np.all(rho >= 2 / 3 * sc) and np.all(rho <= 1.5 * sc))
        ye = np.linspace(cut, fc.edge_right, 41)
        yl = np.linspace(fc.edge_left, -cut, 41)
        re_, rl = fc.density(ye), fc.density(yl)
        ke = np.sqrt(np.maximum(fc.edge_right - ye, 0.0) / t**1.5) / math.pi
        kl = np.sqrt(np.maximum(yl - fc.edge_left, 0.0) / t**1.5) / math.pi
        e_ok = bool(np.all(re_ >= 2 / 3 * ke - 1e-12) and np.all(re_ <= 1.5 * ke + 1e-12)
                    and np.all(rl >= 2 / 3 * kl - 1e-12) and np.all(rl <= 1.5 * kl + 1e-12))
        yq = np.linspace(0.0, 4 / 7, 15)
        g = fc.quantile(yq)
        g[0] = fc.edge_right
        bound = (24 * math.pi) ** (2 / 3) * st
        worst_gap = -math.inf
        for i in range(len(yq)):
            for j in range(i, len(yq)):
                slack = bound * (yq[j] ** (2 / 3) - yq[i] ** (2 / 3)) - (g[i] - g[j])
                worst_gap = max(worst_gap, -slack)
                grows.append((t, yq[i], yq[j], g[i] - g[j], bound * (yq[j] ** (2 / 3) - yq[i] ** (2 / 3))))
        g_ok = worst_gap <= 1e-12
        bulk_ok &= b_ok
        edge_ok &= e_ok
        gap_ok &= g_ok
        rows.append((t, fc.edge_right, fc.edge_left, err, b_ok, e_ok, g_ok))
    rep.check("edge_within_2c", worst_edge_err, 1.0, worst_edge_err <= 1.0,
              detail="max |E_t -+ 2 sqrt t| / (2c)")
    rep.check("bulk_density_sandwich", bulk_ok, None, bulk_ok)
    rep.check("edge_density_sandwich", edge_ok, None, edge_ok)
    rep.check("quantile_gap_bound", gap_ok, None, gap_ok)
    rep.tables["edges"] = (["t", "edge_right", "edge_left", "edge_error", "bulk_ok", "edge_ok", "gap_ok"], rows)
    rep.tables["quantile_gaps"] = (["t", "y", "y_prime", "gap", "bound"], grows)
    return rep


def _domain_points(fc: FreeConvolution, prof: RigidityProfile) -> list[complex]:
    e, f = fc.edge_right, prof.f(fc.t)
    out = []
    for dk in (0.0, 0.05, 0.1, 0.2, 0.5, 1.0, 2.0):
        for eta in (1e-3, 3e-3, 1e-2, 3e-2, 0.1, 0.3, 1.0):
            w = complex(e + f + dk, eta)
            if domain_contains(fc, prof, w):
                out.append(w)
    return out


def loop_residual_diagnostic(cfg: ExperimentConfig) -> ExperimentReport:
    rep = ExperimentReport("loop_residual", cfg.as_dict(include_output=False))
    n, times = cfg.n, cfg.t_grid
    init = parse_measure(cfg.initial_data, n)
    prof = _check_assumption(rep, init.measure, cfg) or _profile(cfg)
    fam = FlowFamily(init.measure)
    pts = {}
    for t in times:
        fc = fam.at(t)
        ws = _domain_points(fc, prof)
        pts[t] = [(w, fc.stieltjes(w), fc.edge_right) for w in ws]
    power = cfg["loop.log_power"]

    def trial(k):
        tr = _evolve_trial(cfg, init, n, cfg.beta, stream_id(SDE, k), times)
        out = []
        for t, lam in zip(tr.times[1:], tr.positions[1:]):
            fin = lam[np.isfinite(lam)]
            for w, m, e in pts[float(t)]:
                mt = np.sum(1.0 / (fin - w)) / n
                bound = math.log(n) ** power / (n * math.sqrt(w.imag * (w.real - e + w.imag)))
                out.append((float(t), w, abs(mt - m), bound))
        return out

    rows, within, total = [], 0, 0
    for k, res in enumerate(run_trials(trial, cfg.trials)):
        if res is None:
            rep.failed_trials += 1
            continue
        for t, w, r, b in res:
            total += 1
            within += r <= b
            rows.append((k, t, w.real, w.imag, r, b))
    frac = within / total if total else 0.0
    rep.hypothesis("domain_points_sampled", total, 1, total > 0)
    rep.check("fraction_within_bound", frac, cfg["loop.fraction"], frac >= cfg["loop.fraction"])
    rep.tables["residuals"] = (["trial", "s", "re_w", "im_w", "residual", "bound"], rows)
    rep.summary = {"pairs": total, "within": within,
                   "points_per_time": {str(t): len(v) for t, v in pts.items()}}
    return rep


def weak_convergence_experiment(cfg: ExperimentConfig) -> ExperimentReport:
    rep = ExperimentReport("weak_convergence", cfg.as_dict(include_output=False))
    t = cfg.t_grid[-1]
    rows, means, worst = [], {}, {}
    fc = None
    for gi, n in enumerate(cfg["weak.n_values"]):
        init = parse_measure(cfg.initial_data, n)
        fc = fc or FreeConvolution(init.measure, t)

        def trial(k, n=n, init=init, gi=gi):
            tr = _evolve_trial(cfg, init, n, cfg.beta, stream_id(SDE, k, gi), [t])
            return levy_distance_to_cdf(empirical(tr.positions[-1], n), fc.cdf, tol=1e-9)

        ds = [d for d in run_trials(trial, cfg.trials) if d is not None]
        rep.failed_trials += cfg.trials - len(ds)
        rows += [(n, k, d) for k, d in enumerate(ds)]
        means[n], worst[n] = float(np.mean(ds)), float(np.max(ds))
    ns = sorted(means)
    cap = cfg["weak.cap"]
    rep.check(f"levy_distance[n={ns[-1]}]", worst[ns[-1]], cap, worst[ns[-1]] <= cap,
              detail="worst trial")
    dec = all(means[b] < means[a] for a, b in zip(ns, ns[1:]))
    rep.check("mean_decreases_in_n", means[ns[-1]] - means[ns[0]], 0.0, dec)
    rep.tables["trials"] = (["n", "trial", "levy_distance"], rows)
    rep.summary = {"mean": {str(n): means[n] for n in ns}, "worst": {str(n): worst[n] for n in ns}}
    return rep


def minimal_eta_star(mu: FiniteMeasure, b: float, T: float) -> float:
    """Smallest eta* for which mu([-x, 0]) >= b x^{3/2} holds on [eta*, T^2]
    (0 if it holds down to every scale)."""
    d = -mu.positions
    cum = np.cumsum(mu.weights)
    # just below atom k the mass within distance d_k is cum[k-1]
    below = np.concatenate([[0.0], cum[:-1]])
    inside = d <= T**2
    fails = inside & (d > 0) & (below < b * np.maximum(d, 0.0) ** 1.5)
    return float(d[fails].max()) if fails.any() else 0.0


def monotonicity_experiment(cfg: ExperimentConfig) -> ExperimentReport:
    rep = ExperimentReport("monotonicity", cfg.as_dict(include_output=False))
    rng = np.random.default_rng([cfg.seed, stream_id(MEASURES, 0, 9)])
    pos = np.concatenate([[0.0], -np.sort(rng.uniform(0.0, 1.0, 4))])
    r5 = build_discrete(zip(pos.tolist(), rng.dirichlet(np.ones(5)).tolist()))
    measures = [("delta0", delta(0.0)), ("uniform", gauss_atoms()), ("random5", r5)]
    t = cfg.t_grid[-1]
    rows, total = [], MonotonicityReport()
    for label, mu in measures:
        prof = _check_assumption(rep, mu, cfg, label)
        if prof is None:
            continue
        eta = prof.eta_star
        fam = FlowFamily(mu)
        e = fam.edge(t)
        kap = np.concatenate([[0.5], rng.uniform(0.0, 2.0, cfg["monotonicity.paths"] - 1)])
        eta_t = np.concatenate([[0.5], np.exp(rng.uniform(math.log(1e-3), math.log(2.0),
                                                          cfg["monotonicity.paths"] - 1))])
        paths = [admissible_path(fam, e + a + 1j * b, t, cfg["monotonicity.grid_points"])
                 for a, b in zip(kap, eta_t)]
        r = monotonicity_report(fam, paths, prof)
        monotonicity_report(fam, paths, prof, report=total)
        d = r.as_dict()
        rep.summary[label] = dict(d, eta_star=eta, t_star=prof.t_star)
        for name, b in d["by_inequality"].items():
            rows.append((label, name, b["checked"], b["violated"], b["worst_slack"]))
    rep.check("violations", total.violated, 0, total.violated == 0,
              detail=f"{total.checked} checks, {total.hypothesis_unmet} outside hypotheses")
    rep.check("worst_slack", total.worst_slack if total.checked else math.nan, -1e-9,
              total.worst_slack >= -1e-9, verdict=False)
    rep.tables["inequalities"] = (["measure", "inequality", "checked", "violated", "worst_slack"], rows)
    return rep


EXPERIMENT_FUNCTIONS = {
    "rigidity": rigidity_experiment,
    "bulk": bulk_rigidity_experiment,
    "universality": universality_experiment,
    "coupling": coupling_experiment,
    "uniform_profile": uniform_profile_checks,
    "small_support": small_support_checks,
    "loop_residual": loop_residual_diagnostic,
    "weak_convergence": weak_convergence_experiment,
    "monotonicity": monotonicity_experiment,
}


def run_experiment(cfg: ExperimentConfig, write: bool = True) -> ExperimentReport:
    start = time.perf_counter()
    rep = EXPERIMENT_FUNCTIONS[cfg.experiment](cfg)
    rep.wall_clock = time.perf_counter() - start
    if write:
        rep.write(cfg.output_dir, figures=cfg["figures"])
    return rep
