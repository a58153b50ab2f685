"""Flat experiment configuration with dotted keys.

A configuration is a JSON object whose keys are all listed in ``KEYS``.
Values are resolved in order: global defaults, per-experiment defaults, the
config file, then command-line overrides. Unknown keys are errors.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path


class ConfigError(ValueError):
    """Unknown key, bad value, or unreadable config file."""


EXPERIMENTS = ("rigidity", "bulk", "universality", "coupling", "uniform_profile",
               "small_support", "loop_residual", "weak_convergence", "monotonicity")


@dataclass(frozen=True)
class Key:
    default: object
    kind: str  # int, float, str, bool, floats, ints
    help: str


KEYS: dict[str, Key] = {
    "experiment": Key("rigidity", "str", "one of " + ", ".join(EXPERIMENTS)),
    "n": Key(400, "int", "number of particles"),
    "beta": Key(2.0, "float", "inverse temperature, >= 1"),
    "trials": Key(50, "int", "Monte Carlo trials"),
    "t_grid": Key([1.0], "floats", "observation times, strictly increasing and positive"),
    "seed": Key(20240917, "int", "64-bit seed for the counter-based noise"),
    "initial_data": Key("delta0", "str",
                        "measure spec: delta0[:A], uniform, small:c, twoatom:c, atoms:x@w,..., csv:path"),
    "output_dir": Key("dbm_edge_out", "str", "directory for report.json and tables"),
    "figures": Key(False, "bool", "also render PNG figures next to the tables"),
    "dbm.dt": Key(2e-3, "float", "macro time step"),
    "dbm.scheme": Key("split", "str", "split, implicit or explicit"),
    "dbm.band": Key(4, "int", "implicit neighbour band of the split scheme"),
    "dbm.full_depth": Key(4, "int", "bridge depth at which a stiff split step goes fully implicit"),
    "profile.b": Key(5e-7, "float", "density lower-bound constant b in (0, 1); at most T^-3 for mass-one data"),
    "profile.T": Key(100.0, "float", "time horizon constant T >= 100"),
    "profile.eta_star": Key(1e-40, "float",
                            "scale eta* in (0, 1/4) below which no lower bound is assumed; raised per "
                            "measure to the smallest admissible value"),
    "profile.floor_log_power": Key(15.0, "float", "p in the floor (log n)^p n^(-2/3) of f(t)"),
    "rigidity.cap": Key(3.0, "float", "cap on the quantile of n^(2/3)(lambda_1 - E_t)"),
    "rigidity.quantile": Key(0.95, "float", "quantile compared against rigidity.cap"),
    "rigidity.log_power": Key(15.0, "float", "p in the literal bound (log n)^p n^(-2/3)"),
    "bulk.n_values": Key([200, 400], "ints", "particle numbers compared"),
    "bulk.cap": Key(5.0, "float", "cap on the rescaled deviation"),
    "universality.betas": Key([1.0, 2.0], "floats", "betas to test"),
    "universality.reference_n": Key(2000, "int", "size of the tridiagonal reference matrices"),
    "universality.reference_samples": Key(400, "int", "reference samples per beta"),
    "universality.ks_cap": Key(0.1, "float", "cap on the two-sample KS distance"),
    "universality.frak_a": Key(0.1, "float", "a in the minimal time n^(-1/3 + a)"),
    "coupling.tol": Key(1e-6, "float", "allowed discretisation slack"),
    "coupling.y_points": Key(50, "int", "quantile grid size of the deterministic comparison"),
    "coupling.observations": Key(20, "int", "observation times per coupled trajectory"),
    "uniform.edge_cap": Key(5.0, "float", "C in |E_t - (1 + log 1/t) t| <= C t^2"),
    "uniform.symmetry_tol": Key(1e-8, "float", "tolerance of the density symmetry about -1/2"),
    "uniform.xi_tol": Key(1e-10, "float", "tolerance of |xi^2 + xi - t|"),
    "uniform.grid_points": Key(401, "int", "density grid size"),
    "small.M": Key(100.0, "float", "constant M of the small-support estimates"),
    "small.grid_points": Key(201, "int", "density grid size"),
    "loop.fraction": Key(0.99, "float", "required fraction of (s, w) pairs within the bound"),
    "loop.log_power": Key(3.5, "float", "p in (log n)^p / (n sqrt(Im w (Re w - E_s + Im w)))"),
    "weak.n_values": Key([100, 400], "ints", "particle numbers compared"),
    "weak.cap": Key(0.05, "float", "cap on the Levy distance at the largest n"),
    "monotonicity.paths": Key(50, "int", "admissible paths per test measure"),
    "monotonicity.grid_points": Key(50, "int", "s-grid points per path"),
}

EXPERIMENT_DEFAULTS: dict[str, dict] = {
    "rigidity": {"n": 400, "trials": 50, "rigidity.cap": 3.0},
    "bulk": {"trials": 20, "initial_data": "small:0.01", "profile.floor_log_power": 1.0},
    "universality": {"n": 500, "trials": 400},
    "coupling": {"n": 50, "trials": 10, "dbm.dt": 1e-4},
    "uniform_profile": {"n": 400, "trials": 4, "t_grid": [0.01, 0.02, 0.05, 0.1],
                        "initial_data": "uniform"},
    "small_support": {"initial_data": "twoatom:1e-6"},
    "loop_residual": {"n": 400, "trials": 20, "t_grid": [0.25, 0.5, 0.75, 1.0],
                      "profile.floor_log_power": 1.0},
    "weak_convergence": {"trials": 20},
    "monotonicity": {"profile.floor_log_power": 1.0},
}


def _coerce(key: str, value):
    spec = KEYS[key]
    kind = spec.kind
    try:
        if kind == "int":
            if isinstance(value, bool) or (isinstance(value, float) and not value.is_integer()):
                raise TypeError
            return int(value)
        if kind == "float":
            if isinstance(value, bool):
                raise TypeError
            return float(value)
        if kind == "str":
            if not isinstance(value, str):
                raise TypeError
            return value
        if kind == "bool":
            if isinstance(value, str) and value.lower() in ("true", "false"):
                return value.lower() == "true"
            if not isinstance(value, bool):
                raise TypeError
            return value
        if kind in ("floats", "ints"):
            if isinstance(value, (int, float)) and not isinstance(value, bool):
                value = [value]
            if not isinstance(value, list):
                raise TypeError
            return [_coerce_scalar(kind[:-1], v) for v in value]
    except (TypeError, ValueError):
        pass
    raise ConfigError(f"{key}: expected {kind}, got {value!r}")


def _coerce_scalar(kind, v):
    if isinstance(v, bool):
        raise TypeError
    if kind == "int":
        if isinstance(v, float) and not v.is_integer():
            raise TypeError
        return int(v)
    return float(v)


def parse_override(text: str) -> tuple[str, object]:
    """``key=value``; the value is read as JSON when possible, else as a string."""
    if "=" not in text:
        raise ConfigError(f"override {text!r} is not of the form key=value")
    key, raw = text.split("=", 1)
    key = key.strip()
    if key not in KEYS:
        raise ConfigError(f"unknown config key {key!r}")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key, value


def load_file(path) -> dict:
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file {str(path)!r} does not exist") from None
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {str(path)!r}: {exc}") from None
    if not isinstance(data, dict):
        raise ConfigError("config file must hold a JSON object")
    unknown = sorted(set(data) - set(KEYS))
    if unknown:
        raise ConfigError(f"unknown config key(s): {', '.join(unknown)}")
    return data


def _validate(cfg: dict):
    if cfg["experiment"] not in EXPERIMENTS:
        raise ConfigError(f"experiment must be one of {', '.join(EXPERIMENTS)}")
    tg = cfg["t_grid"]
    if not tg or any(t <= 0 for t in tg) or any(b <= a for a, b in zip(tg, tg[1:])):
        raise ConfigError("t_grid must be non-empty, positive and strictly increasing")
    if cfg["n"] < 1 or cfg["trials"] < 1:
        raise ConfigError("n and trials must be positive")
    if not (cfg["beta"] >= 1 and math.isfinite(cfg["beta"])):
        raise ConfigError("beta must be finite and at least 1")
    if not 0 <= cfg["seed"] < 2**64:
        raise ConfigError("seed must be a 64-bit unsigned integer")
    if cfg["dbm.dt"] <= 0:
        raise ConfigError("dbm.dt must be positive")


def resolve(file_values: dict | None = None, overrides=()) -> "ExperimentConfig":
    """Merge defaults, experiment defaults, file values and overrides."""
    user = {}
    for k, v in (file_values or {}).items():
        if k not in KEYS:
            raise ConfigError(f"unknown config key {k!r}")
        user[k] = v
    for item in overrides:
        k, v = parse_override(item) if isinstance(item, str) else item
        if k not in KEYS:
            raise ConfigError(f"unknown config key {k!r}")
        user[k] = v
    experiment = user.get("experiment", KEYS["experiment"].default)
    if experiment not in EXPERIMENTS:
        raise ConfigError(f"experiment must be one of {', '.join(EXPERIMENTS)}")
    cfg = {k: spec.default for k, spec in KEYS.items()}
    cfg.update(EXPERIMENT_DEFAULTS[experiment])
    cfg.update(user)
    cfg = {k: _coerce(k, v) for k, v in cfg.items()}
    _validate(cfg)
    return ExperimentConfig(cfg)


class ExperimentConfig:
    """Resolved configuration; read-only mapping with attribute access to the
    common fields."""

    def __init__(self, values: dict):
        self._values = dict(values)

    def __getitem__(self, key):
        return self._values[key]

    def as_dict(self, include_output: bool = True) -> dict:
        out = {k: self._values[k] for k in sorted(self._values)}
        if not include_output:
            out.pop("output_dir")
        return out

    def replace(self, **changes) -> "ExperimentConfig":
        vals = dict(self._values)
        for k, v in changes.items():
            key = k.replace("__", ".")
            if key not in KEYS:
                raise ConfigError(f"unknown config key {key!r}")
            vals[key] = _coerce(key, v)
        _validate(vals)
        return ExperimentConfig(vals)

    experiment = property(lambda self: self._values["experiment"])
    n = property(lambda self: self._values["n"])
    beta = property(lambda self: self._values["beta"])
    trials = property(lambda self: self._values["trials"])
    t_grid = property(lambda self: list(self._values["t_grid"]))
    seed = property(lambda self: self._values["seed"])
    initial_data = property(lambda self: self._values["initial_data"])
    output_dir = property(lambda self: Path(self._values["output_dir"]))


def describe_keys() -> str:
    lines = []
    for k, spec in KEYS.items():
        lines.append(f"  {k:<32} {spec.kind:<7} default {json.dumps(spec.default)}: {spec.help}")
    return "\n".join(lines)
