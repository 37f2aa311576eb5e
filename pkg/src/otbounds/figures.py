"""Figure rendering for experiment reports.

Uses the Agg backend so rendering works headless; every figure lands next to
the delimited output as a PNG.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .experiments import DriftReport, SweepReport

__all__ = ["render_sweep_figure", "render_drift_figure"]


def _median_by_budget(cells):
    """(budgets, medians) of relative error, or of value if no reference."""
    by_budget = {}
    for cell in cells:
        if cell.value is None:
            continue
        metric = cell.relative_error if cell.relative_error is not None else cell.value
        by_budget.setdefault(cell.budget, []).append(metric)
    budgets = sorted(by_budget)
    return budgets, [float(np.median(by_budget[b])) for b in budgets]


def render_sweep_figure(report: SweepReport, path) -> None:
    has_reference = any(c.relative_error is not None for c in report.cells)
    fig, ax = plt.subplots(figsize=(7.0, 4.5))
    methods = sorted({c.method for c in report.cells})
    for method in methods:
        cells = [c for c in report.cells if c.method == method]
        budgets, medians = _median_by_budget(cells)
        if not budgets:
            continue
        style = "o-" if len(budgets) > 1 else "D"
        ax.plot(budgets, medians, style, label=method, markersize=5)
    ax.set_xlabel("budget (batch problems solved)")
    if has_reference:
        ax.set_ylabel("relative error vs exact")
        ax.set_yscale("symlog", linthresh=1e-4)
    else:
        ax.set_ylabel("bound value")
    ax.grid(True, alpha=0.3)
    ax.legend(fontsize=8)
    ax.set_title("bound tightness against solve budget")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def render_drift_figure(report: DriftReport, path) -> None:
    fig, axes = plt.subplots(1, 2, figsize=(10.0, 4.0))
    methods = sorted({c.method for c in report.cells})
    for method in methods:
        cells = [c for c in report.cells if c.method == method]
        angles = sorted({c.angle for c in cells})
        rates = [
            float(np.mean([c.reject for c in cells if c.angle == a])) for a in angles
        ]
        medians = [
            float(np.median([c.p_value for c in cells if c.angle == a])) for a in angles
        ]
        axes[0].plot(angles, rates, "o-", label=method, markersize=5)
        axes[1].plot(angles, medians, "o-", label=method, markersize=5)
    axes[0].set_xlabel("rotation angle (degrees)")
    axes[0].set_ylabel(f"rejection rate at alpha={report.alpha}")
    axes[0].set_ylim(-0.05, 1.05)
    axes[1].set_xlabel("rotation angle (degrees)")
    axes[1].set_ylabel("median p-value")
    axes[1].axhline(report.alpha, color="gray", linestyle=":", linewidth=1)
    for ax in axes:
        ax.grid(True, alpha=0.3)
        ax.legend(fontsize=8)
    fig.suptitle("drift detection under rotation")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
