"""Figure rendering for sweep, tuning, sensitivity and replay reports.

Everything draws through the Agg backend and writes PNG files next to the
CSV reports, so the report path works without a display. Each renderer
returns the paths it wrote. Money axes pick their unit from the data, since
bundled instances range from thousands to billions of MAD.
"""

from __future__ import annotations

import os

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .dispatch import DayDispatch
from .domain import InvestmentPlan
from .evaluation import EvaluationReport, SensitivityReport, SweepReport


def _finish(fig, path: str) -> str:
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def _money_scale(values) -> tuple[float, str]:
    arr = np.asarray(values, dtype=float)
    finite = arr[np.isfinite(arr)]
    peak = float(np.abs(finite).max()) if finite.size else 0.0
    for div, label in ((1e9, "billion MAD"), (1e6, "million MAD"),
                       (1e3, "thousand MAD")):
        if peak >= div:
            return div, label
    return 1.0, "MAD"


def sweep_figures(report: SweepReport, out_dir: str,
                  prefix: str = "sweep") -> list[str]:
    """Operating cost, NPV, emissions reduction and spend mix against the
    budget grid. Failed points are left out of the curves."""
    budgets = report.column("budget")
    ok = np.array([p.status in ("optimal", "limit") for p in report.points])
    bdiv, blabel = _money_scale(budgets)
    written = []

    for name, column, color in (("cost", "operating_cost", "tab:blue"),
                                ("npv", "npv", "tab:green")):
        values = report.column(column)
        vdiv, vlabel = _money_scale(values)
        fig, ax = plt.subplots(figsize=(5.5, 3.6))
        ax.plot(budgets[ok] / bdiv, values[ok] / vdiv, "o-", color=color)
        if name == "npv":
            ax.axhline(0.0, color="grey", lw=0.8)
        ax.set_xlabel(f"investment budget ({blabel})")
        ax.set_ylabel(("operating cost" if name == "cost" else "NPV")
                      + f" ({vlabel})")
        ax.grid(alpha=0.3)
        written.append(_finish(fig, os.path.join(out_dir, f"{prefix}_{name}.png")))

    reduction = report.column("emissions_reduction")
    fig, ax = plt.subplots(figsize=(5.5, 3.6))
    ax.plot(budgets[ok] / bdiv, reduction[ok], "o-", color="tab:red")
    ax.set_xlabel(f"investment budget ({blabel})")
    ax.set_ylabel("CO2 reduction (%)")
    ax.grid(alpha=0.3)
    written.append(_finish(fig, os.path.join(out_dir, f"{prefix}_emissions.png")))

    battery = report.column("battery_spend")[ok]
    solar = report.column("solar_spend")[ok]
    sdiv, slabel = _money_scale(np.concatenate([battery + solar, [0.0]]))
    idx = np.arange(ok.sum())
    fig, ax = plt.subplots(figsize=(5.5, 3.6))
    ax.bar(idx, battery / sdiv, color="tab:purple", label="battery")
    ax.bar(idx, solar / sdiv, bottom=battery / sdiv, color="tab:olive",
           label="solar")
    ax.set_xticks(idx)
    ax.set_xticklabels([f"{b / bdiv:g}" for b in budgets[ok]], rotation=45)
    ax.set_xlabel(f"investment budget ({blabel})")
    ax.set_ylabel(f"spend ({slabel})")
    ax.legend()
    written.append(_finish(fig, os.path.join(out_dir, f"{prefix}_mix.png")))
    return written


def crossval_figures(report: EvaluationReport, out_dir: str,
                     prefix: str = "crossval") -> list[str]:
    """Mean improvement per grid setting as gamma-by-delta heat maps, one for
    operating cost and one for emissions."""
    gammas = sorted({s.gamma for s in report.scores})
    deltas = sorted({s.delta for s in report.scores})
    by_key = {s.key: s for s in report.scores}
    written = []
    for metric, attr, label in (("cost", "cost_improvement",
                                 "operating cost improvement (%)"),
                                ("co2", "co2_improvement",
                                 "CO2 improvement (%)")):
        grid = np.full((len(gammas), len(deltas)), np.nan)
        for i, gamma in enumerate(gammas):
            for j, d in enumerate(deltas):
                score = by_key.get((*gamma, d))
                if score is not None:
                    grid[i, j] = getattr(score, attr)[0]
        fig, ax = plt.subplots(
            figsize=(1.6 + 1.1 * len(deltas), 1.2 + 0.45 * len(gammas)))
        image = ax.imshow(grid, cmap="RdYlGn", aspect="auto")
        ax.set_xticks(range(len(deltas)))
        ax.set_xticklabels([f"{d:g}" for d in deltas])
        ax.set_yticks(range(len(gammas)))
        ax.set_yticklabels([f"({g[0]:g}, {g[1]:g}, {g[2]:g})" for g in gammas])
        ax.set_xlabel("delta")
        ax.set_ylabel("gamma (max, c, clt)")
        for i in range(len(gammas)):
            for j in range(len(deltas)):
                if np.isfinite(grid[i, j]):
                    ax.text(j, i, f"{grid[i, j]:.1f}", ha="center",
                            va="center", fontsize=8)
        fig.colorbar(image, ax=ax, label=label)
        written.append(_finish(fig, os.path.join(out_dir,
                                                 f"{prefix}_{metric}.png")))
    return written


def sensitivity_figure(report: SensitivityReport, out_dir: str,
                       prefix: str = "sensitivity") -> list[str]:
    """Investment, operating cost and emissions per scenario-count setting."""
    labels = [p.label for p in report.points]
    idx = np.arange(len(labels))
    panels = (("investment", [p.investment for p in report.points], "tab:purple"),
              ("operating cost", [p.operating_cost for p in report.points],
               "tab:blue"),
              ("emissions (t)", [p.emissions_t for p in report.points],
               "tab:red"))
    fig, axes = plt.subplots(1, 3, figsize=(9.5, 3.2))
    for ax, (name, values, color) in zip(axes, panels):
        values = np.asarray(values, dtype=float)
        if "emissions" not in name:
            div, unit = _money_scale(values)
            name = f"{name} ({unit})"
            values = values / div
        ax.bar(idx, values, color=color)
        ax.set_xticks(idx)
        ax.set_xticklabels(labels, rotation=45)
        ax.set_title(name, fontsize=10)
    path = _finish(fig, os.path.join(out_dir, f"{prefix}.png"))
    return [path]


def investment_figure(plan: InvestmentPlan, path: str) -> str:
    """Installed battery and solar capacity per horizon year."""
    years = plan.battery_kwh.shape[1]
    idx = np.arange(years)
    width = 0.38
    fig, ax = plt.subplots(figsize=(5.5, 3.4))
    ax.bar(idx - width / 2, plan.battery_kwh.sum(axis=0), width,
           color="tab:purple", label="battery (kWh)")
    ax.bar(idx + width / 2, plan.solar_kw.sum(axis=0), width,
           color="tab:olive", label="solar (kW)")
    ax.set_xticks(idx, [f"year {y + 1}" for y in range(years)])
    ax.set_ylabel("installed capacity")
    ax.legend()
    return _finish(fig, path)


def day_figure(dispatch: DayDispatch, path: str) -> str:
    """Hourly purchases, sales and the aggregate storage level of one
    replayed day."""
    hours = np.arange(dispatch.buy_onee.shape[1])
    onee = dispatch.buy_onee.sum(axis=0)
    nareva = dispatch.buy_nareva.sum(axis=0)
    sold = dispatch.sell.sum(axis=0)
    fig, ax = plt.subplots(figsize=(6.5, 3.6))
    ax.bar(hours, onee, color="tab:blue", label="ONEE purchase")
    ax.bar(hours, nareva, bottom=onee, color="tab:cyan", label="NAREVA purchase")
    ax.bar(hours, -sold, color="tab:orange", label="feed-in sales")
    ax.set_xlabel("hour")
    ax.set_ylabel("energy (kWh)")
    level = ax.twinx()
    level.plot(np.arange(dispatch.storage.shape[1]) - 0.5,
               dispatch.storage.sum(axis=0), color="tab:green", lw=1.5,
               label="stored energy")
    level.set_ylabel("stored energy (kWh)")
    lines, labels = ax.get_legend_handles_labels()
    lines2, labels2 = level.get_legend_handles_labels()
    ax.legend(lines + lines2, labels + labels2, fontsize=8)
    return _finish(fig, path)
