"""Static figures written next to the CSV outputs (non-interactive backend)."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .diagnostics import log_density_on  # noqa: E402

CURVE_METRICS = ("tv", "cross_entropy", "kl", "accuracy")


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_curves(path, rows: list) -> bool:
    """Metric curves against cumulative data visited; one panel per metric."""
    metrics = [k for k in CURVE_METRICS if any(k in r for r in rows)]
    if not metrics:
        return False
    fig, axes = plt.subplots(1, len(metrics), figsize=(4 * len(metrics), 3.2), squeeze=False)
    for ax, key in zip(axes[0], metrics):
        pts = [(r["data_visited"], r[key]) for r in rows if key in r]
        x, y = np.array(pts).T
        ax.plot(x, y, marker="o", ms=3)
        ax.set_xscale("log")
        ax.set_xlabel("data visited")
        ax.set_ylabel(key)
        ax.grid(alpha=0.3)
    _save(fig, path)
    return True


def plot_density(path, oracle, estimate) -> bool:
    """Oracle against estimate on the diagnostic grid (1-D lines or 2-D contours)."""
    if oracle is None:
        return False
    est = np.exp(log_density_on(estimate, oracle.midpoints)).reshape(oracle.shape)
    truth = oracle.density.reshape(oracle.shape)
    if oracle.dim == 1:
        x = oracle.midpoints[:, 0]
        fig, ax = plt.subplots(figsize=(5, 3.2))
        ax.plot(x, truth, label="oracle")
        ax.plot(x, est, "--", label="estimate")
        ax.set_xlabel(r"$\theta$")
        ax.legend()
        _save(fig, path)
        return True
    mids = [np.linspace(lo + (hi - lo) / (2 * n), hi - (hi - lo) / (2 * n), n) for lo, hi, n in oracle.axes]
    fig, axes = plt.subplots(1, 2, figsize=(8, 3.6), sharex=True, sharey=True)
    for ax, field, title in zip(axes, (truth, est), ("oracle", "estimate")):
        ax.contourf(mids[0], mids[1], field.T, levels=20)
        ax.set_title(title)
        ax.set_xlabel(r"$\theta_1$")
    axes[0].set_ylabel(r"$\theta_2$")
    _save(fig, path)
    return True


def plot_run(out_dir, rows, oracle, final) -> None:
    out_dir = Path(out_dir)
    plot_curves(out_dir / "curves.png", rows)
    plot_density(out_dir / "density.png", oracle, final)


def plot_summary(directory, result: dict) -> None:
    """Per-seed final metrics, one strip per algorithm."""
    metrics = sorted({k for g in result.values() for k in g["per_seed"] if k in CURVE_METRICS})
    if not metrics:
        return
    fig, axes = plt.subplots(1, len(metrics), figsize=(4 * len(metrics), 3.2), squeeze=False)
    names = sorted(result)
    for ax, key in zip(axes[0], metrics):
        for i, name in enumerate(names):
            vals = result[name]["per_seed"].get(key, [])
            ax.scatter(np.full(len(vals), i), vals, alpha=0.6)
            if vals:
                ax.hlines(np.median(vals), i - 0.25, i + 0.25, color="k")
        ax.set_xticks(range(len(names)), names)
        ax.set_ylabel(key)
        ax.grid(alpha=0.3, axis="y")
    _save(fig, Path(directory) / "medians.png")
