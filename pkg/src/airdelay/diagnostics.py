"""Convergence diagnostics and posterior summaries.

Split R-hat follows the classic potential-scale-reduction construction:
each chain is halved, and sqrt(((N-1)/N * W + B/N) / W) compares the
within-split variance W with the between-split variance of split means.
A rank-normalized variant is computed alongside it for robustness against
heavy tails, clearly labeled; the classic statistic is the headline number.

Effective sample size rank-normalizes the pooled draws, estimates per-chain
autocorrelations by FFT, and truncates the summed correlation pairs by
Geyer's initial monotone sequence.

Highest-density intervals are exact for the sample: the narrowest
contiguous window of sorted draws holding ceil(mass * n) of them, ties
resolved toward the lower start.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtri
from scipy.stats import rankdata

__all__ = [
    "ConstantChainWarning",
    "ParameterSummary",
    "ConvergenceReport",
    "split_rhat",
    "rank_normalized_rhat",
    "ess_bulk",
    "hdi",
    "summarize_parameter",
    "convergence_report",
    "convergence_report_from_blocks",
]


class ConstantChainWarning(UserWarning):
    """Chains carry no variance; scale-reduction statistics are undefined."""


def _as_chain_matrix(chains) -> np.ndarray:
    x = np.asarray(chains, dtype=float)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2:
        raise ValueError("expected an (n_chains, n_draws) matrix")
    if x.shape[1] < 4:
        raise ValueError("need at least 4 draws per chain")
    return x


def _split(x: np.ndarray) -> np.ndarray:
    half = x.shape[1] // 2
    return np.vstack([x[:, :half], x[:, x.shape[1] - half :]])


def split_rhat(chains) -> float:
    """Classic split potential scale reduction factor.

    Zero within-split variance (constant chains) is reported as +inf along
    with a ConstantChainWarning.
    """
    splits = _split(_as_chain_matrix(chains))
    n = splits.shape[1]
    w = splits.var(axis=1, ddof=1).mean()
    b_over_n = splits.mean(axis=1).var(ddof=1)
    if w == 0.0:
        warnings.warn("constant chains: within-split variance is zero", ConstantChainWarning, stacklevel=2)
        return math.inf
    return math.sqrt(((n - 1) / n * w + b_over_n) / w)


def _rank_normalize(x: np.ndarray) -> np.ndarray:
    ranks = rankdata(x, method="average").reshape(x.shape)
    return ndtri((ranks - 0.375) / (x.size + 0.25))


def rank_normalized_rhat(chains) -> float:
    """Split R-hat on rank-normalized draws (robustness companion)."""
    x = _as_chain_matrix(chains)
    if np.all(x == x.flat[0]):
        warnings.warn("constant chains: within-split variance is zero", ConstantChainWarning, stacklevel=2)
        return math.inf
    return split_rhat(_rank_normalize(x))


def _autocovariance(row: np.ndarray) -> np.ndarray:
    """Biased (1/N) autocovariance of one chain via FFT."""
    n = row.shape[0]
    centered = row - row.mean()
    size = 1
    while size < 2 * n:
        size *= 2
    f = np.fft.rfft(centered, size)
    acov = np.fft.irfft(f * np.conj(f), size)[:n].real
    return acov / n


def _tau_hat(x: np.ndarray) -> float:
    """Integrated autocorrelation time with Geyer's monotone truncation."""
    m, n = x.shape
    acov = np.vstack([_autocovariance(row) for row in x])
    w = (acov[:, 0] * n / (n - 1)).mean()
    var_plus = w * (n - 1) / n
    if m > 1:
        var_plus += x.mean(axis=1).var(ddof=1)
    rho = 1.0 - (w - acov.mean(axis=0)) / var_plus
    pairs: list[float] = []
    k = 0
    while 2 * k + 1 < n:
        pair = rho[2 * k] + rho[2 * k + 1]
        if pair <= 0.0:
            break
        pairs.append(pair)
        k += 1
    for i in range(1, len(pairs)):
        pairs[i] = min(pairs[i], pairs[i - 1])
    # Strongly antithetic chains can drive the pair sum toward zero; keep
    # tau positive so the ESS stays finite.
    return max(-1.0 + 2.0 * sum(pairs), 1e-12)


def ess_bulk(chains) -> float:
    """Bulk effective sample size on rank-normalized split draws.

    Constant chains are flagged with a warning and reported as nan.
    """
    x = _as_chain_matrix(chains)
    if np.all(x == x.flat[0]):
        warnings.warn("constant chains: effective sample size undefined", ConstantChainWarning, stacklevel=2)
        return math.nan
    splits = _split(x)
    z = _rank_normalize(splits)
    m, n = z.shape
    return m * n / _tau_hat(z)


def hdi(draws, mass: float = 0.94) -> tuple[float, float]:
    """Narrowest contiguous window of sorted draws holding ceil(mass * n).

    Ties between equally narrow windows resolve toward the lower start.
    """
    if not 0.0 < mass < 1.0:
        raise ValueError("mass must lie in (0, 1)")
    x = np.sort(np.asarray(draws, dtype=float))
    n = x.shape[0]
    if n < math.ceil(1.0 / (1.0 - mass)):
        raise ValueError(f"need at least {math.ceil(1.0 / (1.0 - mass))} draws for mass {mass}")
    window = math.ceil(mass * n)
    widths = x[window - 1 :] - x[: n - window + 1]
    start = int(widths.argmin())
    return float(x[start]), float(x[start + window - 1])


@dataclass
class ParameterSummary:
    name: str
    posterior_mean: float
    posterior_sd: float
    hdi_low: float
    hdi_high: float
    r_hat: float
    r_hat_rank: float
    ess_bulk: float
    divergent_fraction: float


@dataclass
class ConvergenceReport:
    summaries: list[ParameterSummary]
    statuses: dict[str, str]
    threshold: float
    passed: bool

    def summary(self, name: str) -> ParameterSummary:
        for row in self.summaries:
            if row.name == name:
                return row
        raise KeyError(name)


def summarize_parameter(name: str, chains, divergent_fraction: float = 0.0, mass: float = 0.94) -> ParameterSummary:
    x = _as_chain_matrix(chains)
    pooled = x.ravel()
    constant = bool(np.all(pooled == pooled[0]))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ConstantChainWarning)
        r_hat = split_rhat(x)
        r_hat_rank = rank_normalized_rhat(x)
        ess = ess_bulk(x)
    low, high = (float(pooled[0]), float(pooled[0])) if constant else hdi(pooled, mass)
    return ParameterSummary(
        name=name,
        posterior_mean=float(pooled.mean()),
        posterior_sd=float(pooled.std(ddof=1)),
        hdi_low=low,
        hdi_high=high,
        r_hat=r_hat,
        r_hat_rank=r_hat_rank,
        ess_bulk=ess,
        divergent_fraction=divergent_fraction,
    )


def _stack_parameters(outputs):
    """Per-parameter (chains x draws) matrices from a set of chain outputs."""
    live = [o for o in outputs if o.status == "ok" and o.constrained.shape[0] > 0]
    if not live:
        raise ValueError("no completed chains to summarize")
    names = live[0].names or [f"p{i}" for i in range(live[0].constrained.shape[1])]
    blocks = {name: np.vstack([o.constrained[:, i] for o in live]) for i, name in enumerate(names)}
    if live[0].derived is not None:
        derived_names = live[0].derived_names or [f"d{i}" for i in range(live[0].derived.shape[1])]
        for i, name in enumerate(derived_names):
            blocks[name] = np.vstack([o.derived[:, i] for o in live])
    divergent_fraction = float(np.concatenate([o.divergent for o in live]).mean())
    return blocks, divergent_fraction


def convergence_report_from_blocks(
    blocks, divergent_fraction: float, threshold: float = 1.01, mass: float = 0.94
) -> ConvergenceReport:
    """Report over name -> (chains x draws) matrices.

    Causal sensitivities (beta_*) are held to the strict threshold; the
    temporal scale sigma_gamma is reported with its observed value rather
    than gated, since its residual non-stationarity is scale-dependent.
    """
    summaries = []
    statuses: dict[str, str] = {}
    for name, matrix in blocks.items():
        row = summarize_parameter(name, matrix, divergent_fraction, mass)
        summaries.append(row)
        if name == "sigma_gamma":
            statuses[name] = "INFO"
        else:
            statuses[name] = "PASS" if row.r_hat <= threshold else "WARN"
    passed = all(
        statuses[s.name] == "PASS" for s in summaries if s.name.startswith("beta_")
    )
    return ConvergenceReport(summaries=summaries, statuses=statuses, threshold=threshold, passed=passed)


def convergence_report(outputs, threshold: float = 1.01, mass: float = 0.94) -> ConvergenceReport:
    """Per-parameter summaries with pass/warn statuses for a chain set."""
    blocks, divergent_fraction = _stack_parameters(outputs)
    return convergence_report_from_blocks(blocks, divergent_fraction, threshold, mass)
