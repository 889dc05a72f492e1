"""Static figure rendering for the report path.

Each renderer reads one of the plot-data CSVs written by
``report.export_plot_data`` and draws the corresponding figure to a PNG
next to the delimited output.  Rendering is a presentation convenience; the
CSVs are the contract.
"""

from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402

__all__ = ["render_forest", "render_trajectory", "render_density_shift"]

# Strip the writer version string so repeated runs are byte-identical.
_SAVEFIG = {"dpi": 150, "metadata": {"Software": None}}


def _read_rows(path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as handle:
        return list(csv.DictReader(handle))


def render_forest(csv_path, png_path) -> Path:
    """Interval plot of factor sensitivities across volumetric thresholds."""
    rows = _read_rows(csv_path)
    parameters = sorted({row["parameter"] for row in rows})
    thresholds = list(dict.fromkeys(row["threshold"] for row in rows))
    offsets = {t: (i - (len(thresholds) - 1) / 2) * 0.18 for i, t in enumerate(thresholds)}
    colors = plt.cm.viridis([i / max(1, len(thresholds) - 1) for i in range(len(thresholds))])

    fig, ax = plt.subplots(figsize=(7, 0.9 * len(parameters) + 1.5))
    for i, threshold in enumerate(thresholds):
        for row in rows:
            if row["threshold"] != threshold:
                continue
            y = parameters.index(row["parameter"]) + offsets[threshold]
            mean = float(row["mean"])
            ax.plot(
                [float(row["hdi_low"]), float(row["hdi_high"])],
                [y, y],
                color=colors[i],
                lw=2,
                solid_capstyle="butt",
            )
            ax.plot([mean], [y], "o", color=colors[i], ms=5)
        ax.plot([], [], "o-", color=colors[i], label=threshold)
    ax.axvline(0.0, color="0.4", lw=0.8, ls="--")
    ax.set_yticks(range(len(parameters)))
    ax.set_yticklabels(parameters)
    ax.set_xlabel("posterior mean and 94% HDI (log-odds per count)")
    ax.legend(title="threshold", frameon=False)
    fig.tight_layout()
    fig.savefig(png_path, **_SAVEFIG)
    plt.close(fig)
    return Path(png_path)


def render_trajectory(csv_path, png_path) -> Path:
    """Monthly offset trajectory with its credible band."""
    rows = _read_rows(csv_path)
    months = [int(row["month"]) for row in rows]
    mean = [float(row["mean"]) for row in rows]
    low = [float(row["hdi_low"]) for row in rows]
    high = [float(row["hdi_high"]) for row in rows]

    fig, ax = plt.subplots(figsize=(8, 3.2))
    ax.fill_between(months, low, high, color="tab:blue", alpha=0.25, lw=0, label="94% HDI")
    ax.plot(months, mean, color="tab:blue", lw=1.4, label="posterior mean")
    ax.axhline(0.0, color="0.4", lw=0.8, ls="--")
    ax.set_xlabel("month index")
    ax.set_ylabel("temporal offset (log-odds)")
    ax.legend(frameon=False, loc="upper left")
    fig.tight_layout()
    fig.savefig(png_path, **_SAVEFIG)
    plt.close(fig)
    return Path(png_path)


def render_density_shift(csv_path, png_path) -> Path:
    """Overlaid histograms of the security sensitivity across epochs."""
    rows = _read_rows(csv_path)
    epochs = list(dict.fromkeys(row["epoch"] for row in rows))
    colors = ("tab:orange", "tab:blue", "tab:green", "tab:red")

    fig, ax = plt.subplots(figsize=(7, 3.2))
    for i, epoch in enumerate(epochs):
        sub = [row for row in rows if row["epoch"] == epoch]
        lefts = [float(row["bin_low"]) for row in sub]
        widths = [float(row["bin_high"]) - float(row["bin_low"]) for row in sub]
        counts = [int(row["count"]) for row in sub]
        ax.bar(
            lefts,
            counts,
            width=widths,
            align="edge",
            alpha=0.55,
            color=colors[i % len(colors)],
            label=epoch,
            lw=0,
        )
    ax.axvline(0.0, color="0.4", lw=0.8, ls="--")
    ax.set_xlabel("security sensitivity (log-odds per count)")
    ax.set_ylabel("draws per bin")
    ax.legend(frameon=False)
    fig.tight_layout()
    fig.savefig(png_path, **_SAVEFIG)
    plt.close(fig)
    return Path(png_path)
