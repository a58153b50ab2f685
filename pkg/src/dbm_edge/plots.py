"""Optional PNG figures for experiment reports (matplotlib, Agg backend)."""
from __future__ import annotations

from pathlib import Path

import numpy as np


def _pyplot():
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    return plt


def ecdf_figure(samples: dict, path, xlabel: str = "statistic"):
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(5, 3.5))
    for label, vals in samples.items():
        v = np.sort(np.asarray(vals, dtype=float))
        ax.step(v, np.arange(1, len(v) + 1) / len(v), where="post", label=label)
    ax.set_xlabel(xlabel)
    ax.set_ylabel("empirical CDF")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120, metadata={"Software": None})
    plt.close(fig)
    return Path(path)


def density_figure(fc, path, points: int = 401):
    plt = _pyplot()
    ys = fc.density_grid(points)
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.plot(ys, fc.density(ys))
    ax.set_xlabel("y")
    ax.set_ylabel(f"density at t = {fc.t:g}")
    fig.tight_layout()
    fig.savefig(path, dpi=120, metadata={"Software": None})
    plt.close(fig)
    return Path(path)


def render(report, out_dir) -> list[Path]:
    """Figures for a report: ECDFs of any raw samples it carries and
    histograms of its tables' last numeric column."""
    out_dir = Path(out_dir)
    paths = []
    samples = report.extra.get("samples")
    if samples:
        paths.append(ecdf_figure(samples, out_dir / f"{report.experiment}_samples.png"))
    plt = _pyplot()
    for name, (header, rows) in report.tables.items():
        try:
            vals = np.array([float(r[-1]) for r in rows], dtype=float)
        except (TypeError, ValueError):
            continue
        vals = vals[np.isfinite(vals)]
        if len(vals) == 0:
            continue
        fig, ax = plt.subplots(figsize=(5, 3.5))
        ax.hist(vals, bins=min(40, max(5, len(vals) // 5)))
        ax.set_xlabel(header[-1])
        ax.set_title(f"{report.experiment}: {name}", fontsize=9)
        fig.tight_layout()
        p = out_dir / f"{report.experiment}_{name}.png"
        fig.savefig(p, dpi=120, metadata={"Software": None})
        plt.close(fig)
        paths.append(p)
    return paths
