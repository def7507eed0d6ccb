"""
Static SVG figures of stored trial traces, batch summaries and spindle sweeps.
"""

import os
from typing import List, Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np
import pandas as pd

from spine_drill.logging import log, setup_logging
from spine_drill.simulator import MAX_RESIDUAL, SUMMARY_COLUMNS, TRACE_COLUMNS, TrialConfig, run_trial
from spine_drill.utilities import read_csv

SWEEP_COLUMNS = ["mode", "spindle_rpm", "success_rate", "f_out_median", "f_in_median", "residual_median"]

MODE_COLORS = {"stationary": "tab:gray", "uncompensated": "tab:red", "compensated": "tab:blue"}

# Same input, same bytes.
matplotlib.rcParams["svg.hashsalt"] = "spine-drill"


class UnknownTableError(ValueError):
    pass


def _save(fig, path: str) -> str:
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    log.info(f"Wrote {path}")
    return path


def key_points(trace: pd.DataFrame) -> pd.DataFrame:
    """The first sample of every recognizer phase after calibration."""

    changed = trace["phase"] != trace["phase"].shift()
    return trace[changed & (trace["phase"] != "calibrating")]


def plot_force_trace(trace: pd.DataFrame, path: str, title: str = "Thrust force") -> str:
    fig, ax = plt.subplots(1, 1, figsize=(10, 5))
    ax.plot(trace["t_s"], trace["force_n"], color="tab:gray", linewidth=0.8, alpha=0.6, label="Block mean")
    ax.plot(trace["t_s"], trace["f_bar_n"], color="tab:blue", linewidth=1.5, label="Moving average")

    points = key_points(trace)
    ax.scatter(points["t_s"], points["f_bar_n"], color="tab:red", zorder=3, label="Key points")
    for _, row in points.iterrows():
        ax.annotate(
            row["phase"],
            (row["t_s"], row["f_bar_n"]),
            textcoords="offset points",
            xytext=(4, 8),
            fontsize=8,
        )

    ax.set_title(title)
    ax.set_xlabel("Time (s)")
    ax.set_ylabel("Force (N)")
    ax.grid(True, alpha=0.3)
    ax.legend(loc="upper right")
    return _save(fig, path)


def plot_residuals(summary: pd.DataFrame, path: str) -> str:
    """Residual inner-layer thickness of every successful trial, per mode."""

    fig, ax = plt.subplots(1, 1, figsize=(10, 5))
    successes = summary[summary["success"].astype(bool)]
    offset = 0
    for mode, group in successes.groupby("mode", sort=False):
        x = np.arange(len(group)) + offset
        ax.bar(x, group["residual_mm"], color=MODE_COLORS.get(mode, "tab:green"), label=f"{mode} ({len(group)})")
        offset += len(group) + 2

    ax.axhline(y=MAX_RESIDUAL, color="red", linestyle="--", linewidth=1.5, label=f"{MAX_RESIDUAL:g} mm limit")
    if len(successes) != 0:
        median = float(successes["residual_mm"].median())
        ax.axhline(y=median, color="black", linestyle=":", linewidth=1.0, label=f"median {median:.2f} mm")

    ax.set_title("Residual inner cortical thickness of successful trials")
    ax.set_xlabel("Trial")
    ax.set_ylabel("Residual thickness (mm)")
    ax.set_ylim(bottom=0.0)
    ax.grid(True, axis="y", alpha=0.3)
    ax.legend(loc="upper right")
    return _save(fig, path)


def success_table(summaries: pd.DataFrame) -> pd.DataFrame:
    """Success rate per (mode, spindle speed) of concatenated batch summaries."""

    return (
        summaries.assign(success=summaries["success"].astype(bool))
        .groupby(["mode", "spindle_rpm"], sort=False)["success"]
        .mean()
        .rename("success_rate")
        .reset_index()
    )


def plot_success_rates(table: pd.DataFrame, path: str) -> str:
    fig, ax = plt.subplots(1, 1, figsize=(8, 5))
    rpms = sorted(table["spindle_rpm"].unique())
    modes = list(dict.fromkeys(table["mode"]))
    width = 0.8 / len(modes)

    for i, mode in enumerate(modes):
        rates = table[table["mode"] == mode].set_index("spindle_rpm")["success_rate"]
        heights = [100 * rates.get(rpm, np.nan) for rpm in rpms]
        ax.bar(
            np.arange(len(rpms)) + (i - (len(modes) - 1) / 2) * width,
            heights,
            width=width,
            color=MODE_COLORS.get(mode, "tab:green"),
            label=mode,
        )

    ax.set_xticks(np.arange(len(rpms)))
    ax.set_xticklabels([f"{rpm:g}" for rpm in rpms])
    ax.set_title("Successful stops in the inner cortical layer")
    ax.set_xlabel("Spindle speed (rpm)")
    ax.set_ylabel("Success rate (%)")
    ax.set_ylim(0, 105)
    ax.grid(True, axis="y", alpha=0.3)
    ax.legend(loc="lower left")
    return _save(fig, path)


def render(paths: Sequence[str], output_dir: str) -> List[str]:
    """
    One figure per input CSV, chosen by its columns: a force trace for trial traces,
    residual bars for batch summaries and success-rate bars for spindle sweeps.
    Batch summaries also get a combined `success-rates.svg`.
    """

    written = []
    summaries = []
    for path in paths:
        frame = read_csv(path)
        name = os.path.splitext(os.path.basename(path))[0]
        target = os.path.join(output_dir, f"{name}.svg")
        columns = list(frame.columns)

        if columns == TRACE_COLUMNS:
            written.append(plot_force_trace(frame, target, title=f"Thrust force, {name}"))
        elif columns == SUMMARY_COLUMNS:
            written.append(plot_residuals(frame, target))
            summaries.append(frame)
        elif columns == SWEEP_COLUMNS:
            written.append(plot_success_rates(frame, target))
        else:
            raise UnknownTableError(
                f"{path}: expected a trial trace, batch summary or spindle sweep, found the columns "
                f"{','.join(map(str, columns))}"
            )

    if len(summaries) != 0:
        table = success_table(pd.concat(summaries, ignore_index=True))
        written.append(plot_success_rates(table, os.path.join(output_dir, "success-rates.svg")))
    return written


if __name__ == "__main__":
    setup_logging()

    result = run_trial(TrialConfig(seed=42))
    plot_force_trace(result.trace, "trace.svg")
