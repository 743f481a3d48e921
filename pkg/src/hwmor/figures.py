"""Figure rendering for the report path.

Each helper writes one PNG next to the delimited outputs. All take data
objects from the pipeline and a target path; nothing here computes.
"""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .curve_sim import YieldCurveSet
from .greedy import ErrorModel, GreedyTrace
from .report import ScenarioReport, ScenarioTable


def plot_curve_fan(curve_set: YieldCurveSet, path: str | Path, max_curves: int = 200) -> Path:
    """Simulated curves over the tenor grid, with the median highlighted."""
    path = Path(path)
    times = curve_set.grid.times
    curves = curve_set.curves
    shown = curves[: max_curves]

    fig, ax = plt.subplots(figsize=(7, 4.2))
    ax.plot(times, shown.T, color="steelblue", alpha=0.08, lw=0.8)
    ax.plot(times, np.median(curves, axis=0), color="crimson", lw=1.8, label="median")
    if curve_set.last_observed is not None:
        ax.plot(times, curve_set.last_observed, color="black", lw=1.4,
                ls="--", label="last observed")
    ax.set_xlabel("tenor (years)")
    ax.set_ylabel("rate")
    ax.set_title(f"{curves.shape[0]} simulated curves")
    ax.grid(alpha=0.3)
    ax.legend(loc="best", fontsize=9)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def plot_greedy_trace(trace: GreedyTrace, path: str | Path) -> Path:
    """Residual decay over greedy iterations."""
    path = Path(path)
    iters = [r.iteration for r in trace.records]
    max_eps = [r.max_eps for r in trace.records]
    mean_eps = [r.mean_eps for r in trace.records]

    fig, ax = plt.subplots(figsize=(6.5, 4.2))
    ax.semilogy(iters, max_eps, "o-", color="firebrick", label="max residual")
    ax.semilogy(iters, mean_eps, "s--", color="steelblue", label="mean residual")
    preds = [(r.iteration, r.predicted_error) for r in trace.records
             if r.predicted_error is not None]
    if preds:
        ax.semilogy(*zip(*preds), "^:", color="darkorange", label="predicted error")
    ax.set_xlabel("iteration")
    ax.set_ylabel("relative residual")
    ax.set_title(f"{trace.strategy} greedy ({trace.terminated_reason})")
    ax.grid(alpha=0.3, which="both")
    ax.legend(loc="best", fontsize=9)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def plot_error_model(model: ErrorModel, path: str | Path) -> Path:
    """Measured (residual, error) pairs and the fitted power law."""
    path = Path(path)
    errors = model.points[:, 0]
    residuals = model.points[:, 1]
    span = np.geomspace(residuals.min(), residuals.max(), 50)

    fig, ax = plt.subplots(figsize=(5.5, 4.2))
    ax.loglog(residuals, errors, "o", color="steelblue", label="measured")
    ax.loglog(span, model.predict(span), "-", color="firebrick",
              label=f"slope {model.gamma:.2f}")
    ax.set_xlabel("residual estimate")
    ax.set_ylabel("true relative error")
    ax.grid(alpha=0.3, which="both")
    ax.legend(loc="best", fontsize=9)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def plot_scenario_distribution(
    table: ScenarioTable,
    reports: Sequence[ScenarioReport],
    path: str | Path,
) -> Path:
    """Histogram of scenario values per horizon with percentile markers."""
    path = Path(path)
    n = len(table.horizons)
    fig, axes = plt.subplots(1, n, figsize=(5.2 * n, 4.0), squeeze=False)
    by_horizon = {r.horizon: r for r in reports}
    for j, h in enumerate(table.horizons):
        ax = axes[0][j]
        ax.hist(table.values[:, j], bins=60, color="steelblue", alpha=0.8)
        rep = by_horizon.get(h)
        if rep is not None:
            for value, label, color in (
                (rep.unfavorable, "unfavorable", "firebrick"),
                (rep.moderate, "moderate", "black"),
                (rep.favorable, "favorable", "seagreen"),
            ):
                ax.axvline(value, color=color, ls="--", lw=1.2, label=label)
        ax.set_xlabel("value")
        ax.set_ylabel("scenarios")
        ax.set_title(f"{h:g}y ({table.engine})")
        ax.grid(alpha=0.3)
        ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path
