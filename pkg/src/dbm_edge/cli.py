"""Command-line entry point: ``dbm-edge <subcommand> [options]``.

Exit codes: 0 pass, 1 configuration error, 2 a verdict failed,
3 a hypothesis of the experiment is not met.
"""
from __future__ import annotations

import argparse
import math
import sys
from pathlib import Path

import numpy as np

from . import _io
from .config import ConfigError, describe_keys, load_file, resolve
from .dbm import NoiseStream, ParticleSystem, SchemeOptions, StepFailure, evolve
from .freeconv import FreeConvolution
from .harness import (EXIT_CONFIG, EXIT_FAIL, EXIT_PASS, parse_measure, run_experiment, stream_id,
                      SDE)

SUBCOMMANDS = {
    "simulate": "evolve one trajectory and write it as CSV",
    "freeconv": "edge data and density of a free convolution",
    "rigidity": "edge rigidity experiment (--bulk: bulk rigidity)",
    "universality": "edge statistic against the tridiagonal reference",
    "coupling": "coupled dynamics and quantile comparison",
    "examples": "worked examples: --uniform, --small-support, --monotonicity, --weak-convergence",
    "residual": "loop-equation residual on the spectral domain",
}

KEY_HELP = "config keys (JSON file via --config, or --set key=value):\n" + describe_keys()


def _common(p: argparse.ArgumentParser):
    p.add_argument("--config", help="JSON config file with a flat key set")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                   help="override a config key (repeatable)")
    p.add_argument("--seed", type=int, help="shorthand for --set seed=...")
    p.add_argument("--output-dir", help="shorthand for --set output_dir=...")
    p.add_argument("--figures", action="store_true", help="also write PNG figures")


def build_parser() -> argparse.ArgumentParser:
    fmt = argparse.RawDescriptionHelpFormatter
    parser = argparse.ArgumentParser(
        prog="dbm-edge", formatter_class=fmt,
        description="Dyson Brownian motion edge experiments.\n\nsubcommands:\n"
        + "\n".join(f"  {k:<13} {v}" for k, v in SUBCOMMANDS.items()),
        epilog=KEY_HELP)
    sub = parser.add_subparsers(dest="command", required=True, metavar="subcommand")
    ps = {}
    for name, text in SUBCOMMANDS.items():
        ps[name] = sub.add_parser(name, help=text, description=text, epilog=KEY_HELP, formatter_class=fmt)
        _common(ps[name])
    ps["freeconv"].add_argument("--measure", help="measure spec (default: initial_data)")
    ps["freeconv"].add_argument("--t", type=float, help="time (default: last entry of t_grid)")
    ps["freeconv"].add_argument("--emit-density", action="store_true", help="write the density CSV")
    ps["freeconv"].add_argument("--points", type=int, default=401, help="density grid size (odd)")
    ps["simulate"].add_argument("--trial", type=int, default=0, help="trial index selecting the noise stream")
    ps["rigidity"].add_argument("--bulk", action="store_true", help="bulk instead of edge rigidity")
    ex = ps["examples"].add_mutually_exclusive_group(required=True)
    for flag in ("uniform", "small-support", "monotonicity", "weak-convergence"):
        ex.add_argument(f"--{flag}", action="store_true")
    ps["examples"].add_argument("--t", type=float, help="single time replacing t_grid")
    return parser


def _experiment_for(args) -> str | None:
    if args.command == "rigidity":
        return "bulk" if args.bulk else "rigidity"
    if args.command == "examples":
        for flag, exp in (("uniform", "uniform_profile"), ("small_support", "small_support"),
                          ("monotonicity", "monotonicity"), ("weak_convergence", "weak_convergence")):
            if getattr(args, flag):
                return exp
    return {"universality": "universality", "coupling": "coupling", "residual": "loop_residual"}.get(args.command)


def _config(args, experiment):
    file_values = load_file(args.config) if args.config else {}
    overrides = list(args.overrides)
    if args.seed is not None:
        overrides.append(f"seed={args.seed}")
    if args.output_dir is not None:
        overrides.append(("output_dir", args.output_dir))
    if args.figures:
        overrides.append("figures=true")
    if getattr(args, "t", None) is not None and args.command == "examples":
        overrides.append(("t_grid", [args.t]))
    if experiment is not None:
        declared = [v for k, v in file_values.items() if k == "experiment"]
        for item in overrides:
            if isinstance(item, str) and item.split("=", 1)[0].strip() == "experiment":
                declared.append(item.split("=", 1)[1])
        if any(d != experiment for d in declared):
            raise ConfigError(f"experiment {declared[-1]!r} conflicts with subcommand {args.command!r}")
        overrides.append(("experiment", experiment))
    return resolve(file_values, overrides)


def _freeconv(args, cfg) -> int:
    spec = args.measure or cfg.initial_data
    t = cfg.t_grid[-1] if args.t is None else args.t
    if t < 0:
        raise ConfigError("--t must be non-negative")
    init = parse_measure(spec)
    fc = FreeConvolution(init.measure, t)
    out = cfg.output_dir
    summary = fc.edge_summary()
    summary["measure"] = spec
    _io.write_json(out / "freeconv.json", summary)
    print(f"edge_right {_io.fmt(fc.edge_right)} edge_left {_io.fmt(fc.edge_left)}")
    if args.emit_density:
        path = fc.write_density_csv(out / "density.csv", args.points)
        print(f"density written to {path}")
        if cfg["figures"]:
            from . import plots
            plots.density_figure(fc, out / "density.png", args.points)
    return EXIT_PASS


def _simulate(args, cfg) -> int:
    init = parse_measure(cfg.initial_data, cfg.n)
    times = cfg.t_grid
    sys0 = ParticleSystem(init.particles, cfg.beta, 0.0)
    opts = SchemeOptions(scheme=cfg["dbm.scheme"], band=cfg["dbm.band"], full_depth=cfg["dbm.full_depth"])
    noise = NoiseStream(cfg.seed, stream_id(SDE, args.trial))
    try:
        tr = evolve(sys0, max(times), cfg["dbm.dt"], noise, observe=sorted({0.0, *times}), opts=opts)
    except StepFailure as exc:
        print(f"FAIL step: {exc}")
        return EXIT_FAIL
    out = cfg.output_dir
    tr.write_csv(out / "trajectory.csv")
    meta = tr.metadata()
    meta["initial_data"] = cfg.initial_data
    _io.write_json(out / "trajectory.json", meta)
    fin = tr.final.positions[np.isfinite(tr.final.positions)]
    top = fin[0] if len(fin) else math.nan
    print(f"simulated n={cfg.n} beta={cfg.beta:g} to t={times[-1]:g}: lambda_1 = {_io.fmt(top)}")
    return EXIT_PASS


def run(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        experiment = _experiment_for(args)
        cfg = _config(args, experiment)
        if args.command == "freeconv":
            return _freeconv(args, cfg)
        if args.command == "simulate":
            return _simulate(args, cfg)
        report = run_experiment(cfg)
    except (ConfigError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    for line in report.summary_lines():
        print(line)
    print(f"{report.experiment}: {report.status} ({Path(cfg.output_dir) / 'report.json'})")
    return report.exit_code


def main(argv=None):
    sys.exit(run(argv))


if __name__ == "__main__":
    main()
