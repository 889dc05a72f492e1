"""Posterior reporting: cross-epoch shifts, probability conversions, exports.

The structural-shift comparison takes per-factor posterior means from a
pre-pandemic baseline fit and a full-horizon fit and reports the difference
in log-odds sensitivity together with its odds-ratio multiplier
exp(difference), rendered as a percentage (a multiplier of 3.2446 prints as
324.46%).  Full precision is kept in every file; rounding happens only at
presentation.

Plot-data exports are plain CSVs with documented columns:

* forest.csv        parameter, threshold, mean, hdi_low, hdi_high
* gamma_trajectory.csv  month, mean, hdi_low, hdi_high
* density_shift.csv epoch, bin_low, bin_high, count
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .model import FACTORS

__all__ = [
    "EpochComparison",
    "ClusterInterceptRow",
    "ScalingRow",
    "SummaryRow",
    "MissingFactorError",
    "compare_epochs",
    "prob_from_logit",
    "cluster_intercept_rows",
    "scaling_table",
    "load_summary_csv",
    "export_plot_data",
]


class MissingFactorError(KeyError):
    """A summary lacks one of the four factor sensitivities."""


@dataclass
class EpochComparison:
    factor: str
    beta_baseline: float
    beta_full: float
    delta: float
    or_multiplier: float

    @property
    def or_percent(self) -> float:
        return 100.0 * self.or_multiplier


@dataclass
class ClusterInterceptRow:
    cluster: str
    alpha: float
    probability: float


@dataclass
class ScalingRow:
    factor: str
    betas: dict[str, float | None]
    crossover: bool


@dataclass
class SummaryRow:
    """One parameter row loaded from a diagnostics summary CSV."""

    name: str
    mean: float
    sd: float
    hdi_low: float
    hdi_high: float
    r_hat: float
    ess_bulk: float


def _posterior_mean(entry) -> float:
    if isinstance(entry, (int, float, np.floating)):
        return float(entry)
    for attribute in ("posterior_mean", "mean"):
        if hasattr(entry, attribute):
            return float(getattr(entry, attribute))
    if isinstance(entry, dict) and "mean" in entry:
        return float(entry["mean"])
    raise TypeError(f"cannot extract a posterior mean from {type(entry).__name__}")


def _factor_mean(summary, factor: str) -> float:
    for key in (f"beta_{factor}", factor):
        if key in summary:
            return _posterior_mean(summary[key])
    raise MissingFactorError(f"summary lacks factor {factor!r}")


def compare_epochs(baseline, full) -> list[EpochComparison]:
    """Per-factor sensitivity shift between a baseline and a full-horizon fit.

    Both inputs map parameter names (beta_weather, ... or bare factor names)
    to posterior means or summary rows.  The multiplier is the ratio of the
    two odds ratios: exp(beta_full) / exp(beta_baseline) = exp(delta).
    """
    rows = []
    for factor in FACTORS:
        b0 = _factor_mean(baseline, factor)
        b1 = _factor_mean(full, factor)
        delta = b1 - b0
        rows.append(
            EpochComparison(
                factor=factor,
                beta_baseline=b0,
                beta_full=b1,
                delta=delta,
                or_multiplier=math.exp(delta),
            )
        )
    return rows


def prob_from_logit(alpha: float) -> float:
    """Logistic inverse: delay probability implied by a log-odds intercept."""
    if alpha >= 0:
        return 1.0 / (1.0 + math.exp(-alpha))
    z = math.exp(alpha)
    return z / (1.0 + z)


def cluster_intercept_rows(alphas: dict[str, float]) -> list[ClusterInterceptRow]:
    """Intercepts with their implied delay probabilities."""
    return [
        ClusterInterceptRow(cluster=name, alpha=float(a), probability=prob_from_logit(float(a)))
        for name, a in alphas.items()
    ]


def scaling_table(summaries) -> list[ScalingRow]:
    """Factor sensitivities across volumetric thresholds with crossover flags.

    ``summaries`` maps an ordered threshold label (e.g. s30, s50, s100) to a
    per-parameter summary mapping.  A factor missing from some threshold
    leaves a gap and emits a warning; a sign change across the present
    values flags the row as a crossover.
    """
    labels = list(summaries)
    rows = []
    for factor in FACTORS:
        betas: dict[str, float | None] = {}
        for label in labels:
            try:
                betas[label] = _factor_mean(summaries[label], factor)
            except MissingFactorError:
                warnings.warn(f"threshold {label}: no posterior mean for {factor}", stacklevel=2)
                betas[label] = None
        present = [v for v in betas.values() if v is not None]
        crossover = bool(present) and (min(present) < 0.0 <= max(present) or max(present) > 0.0 > min(present))
        rows.append(ScalingRow(factor=factor, betas=betas, crossover=crossover))
    return rows


def load_summary_csv(path) -> dict[str, SummaryRow]:
    """Read a diagnostics summary CSV into name -> SummaryRow."""
    out: dict[str, SummaryRow] = {}
    with open(path, newline="", encoding="utf-8") as handle:
        for record in csv.DictReader(handle):
            row = SummaryRow(
                name=record["parameter"],
                mean=float(record["mean"]),
                sd=float(record["sd"]),
                hdi_low=float(record["hdi_3%"]),
                hdi_high=float(record["hdi_97%"]),
                r_hat=float(record["r_hat"]),
                ess_bulk=float(record["ess_bulk"]),
            )
            out[row.name] = row
    return out


def _write_csv(path, header, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(header)
        writer.writerows(rows)


def _hdi_bounds(entry) -> tuple[float, float]:
    for pair in (("hdi_low", "hdi_high"),):
        if hasattr(entry, pair[0]):
            return float(getattr(entry, pair[0])), float(getattr(entry, pair[1]))
        if isinstance(entry, dict) and pair[0] in entry:
            return float(entry[pair[0]]), float(entry[pair[1]])
    raise TypeError("summary entry carries no interval bounds")


def export_plot_data(draws, summaries, out_dir, bins: int = 60) -> dict[str, Path]:
    """Write the plot-ready series; returns the files it produced.

    ``summaries`` maps threshold labels to per-parameter summary rows
    (means and interval bounds); the four factor sensitivities feed the
    forest series, and the monthly offsets of the last label feed the
    trajectory.  ``draws`` maps epoch labels to arrays of security
    sensitivity draws for the density-shift histogram; pass an empty
    mapping to skip it.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written: dict[str, Path] = {}

    forest_rows = []
    for label, summary in summaries.items():
        for factor in FACTORS:
            name = f"beta_{factor}"
            if name not in summary:
                continue
            low, high = _hdi_bounds(summary[name])
            forest_rows.append([name, label, repr(_posterior_mean(summary[name])), repr(low), repr(high)])
    if forest_rows:
        path = out_dir / "forest.csv"
        _write_csv(path, ["parameter", "threshold", "mean", "hdi_low", "hdi_high"], forest_rows)
        written["forest"] = path

    if summaries:
        last = summaries[list(summaries)[-1]]
        trajectory = []
        t = 0
        while f"gamma_{t}" in last:
            entry = last[f"gamma_{t}"]
            low, high = _hdi_bounds(entry)
            trajectory.append([t, repr(_posterior_mean(entry)), repr(low), repr(high)])
            t += 1
        if trajectory:
            path = out_dir / "gamma_trajectory.csv"
            _write_csv(path, ["month", "mean", "hdi_low", "hdi_high"], trajectory)
            written["trajectory"] = path

    if draws:
        pooled = np.concatenate([np.asarray(v, dtype=float) for v in draws.values()])
        edges = np.histogram_bin_edges(pooled, bins=bins)
        rows = []
        for epoch, values in draws.items():
            counts, _ = np.histogram(np.asarray(values, dtype=float), bins=edges)
            for b in range(len(counts)):
                rows.append([epoch, repr(float(edges[b])), repr(float(edges[b + 1])), int(counts[b])])
        path = out_dir / "density_shift.csv"
        _write_csv(path, ["epoch", "bin_low", "bin_high", "count"], rows)
        written["density"] = path
    return written
