"""Synthetic panel generation from the delay model run forward.

A scenario fixes the panel dimensions (clusters, months, record count), the
generating parameters, and a count process for the four cause predictors.
Records mimic the real panel: airport volumes are log-normal with a
cluster-specific level, the delayed count is Beta-Binomial around the
model's linear predictor, and the five per-cause record counts are a
Dirichlet split of the delayed count so every record satisfies the panel
invariants exactly.  The count process and apportionment shares are test
fixtures, not estimates.

The returned design carries the generative predictors; the records carry
the apportioned counts.  Recovery tests fit the returned design, while the
records feed the ingest -> cluster -> fit pipeline end to end.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import expit

from .ingest import ConfigurationError, ObservationRecord, month_index, parse_year_month
from .model import ETA_CLAMP, DesignMatrix, ModelConfig, ParameterVector, design_from_arrays

__all__ = [
    "CountProcess",
    "ScenarioConfig",
    "SimulatedData",
    "default_scenario",
    "load_scenario",
    "simulate_dataset",
    "draw_prior_params",
    "prior_predictive",
]

_DEFAULT_SHARES = (0.30, 0.05, 0.30, 0.0025, 0.3475)


@dataclass
class CountProcess:
    """Gamma mean/sd pairs for the four cause predictors (test fixture)."""

    weather: tuple[float, float] = (2.0, 1.5)
    nas: tuple[float, float] = (8.0, 2.5)
    security: tuple[float, float] = (0.5, 0.8)
    late: tuple[float, float] = (8.0, 2.5)

    def draw(self, rng, size: int) -> np.ndarray:
        columns = []
        for mean, sd in (self.weather, self.nas, self.security, self.late):
            shape = (mean / sd) ** 2
            scale = sd**2 / mean
            columns.append(rng.gamma(shape, scale, size=size))
        return np.column_stack(columns)


@dataclass
class ScenarioConfig:
    n_clusters: int = 3
    n_months: int = 48
    records_per_month: int = 42
    total_records: int | None = None
    n_airports: int = 12
    carriers: tuple[str, ...] = ("AA", "BB")
    start: tuple[int, int] = (2010, 1)
    covid_start: tuple[int, int] | None = (2012, 1)
    covid_end: tuple[int, int] | None = (2012, 12)
    volume_log_means: tuple[float, ...] = (8.0, 5.0, 6.5)
    volume_log_sd: float = 0.35
    counts: CountProcess = field(default_factory=CountProcess)
    cause_shares: tuple[float, ...] = _DEFAULT_SHARES
    apportion_concentration: float = 200.0
    true_params: ParameterVector | None = None
    auto_gamma: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.n_clusters < 1 or self.n_months < 1 or self.n_airports < self.n_clusters:
            raise ConfigurationError("need n_airports >= n_clusters >= 1 and n_months >= 1")
        if len(self.volume_log_means) != self.n_clusters:
            raise ConfigurationError("one volume level per cluster required")
        if abs(sum(self.cause_shares) - 1.0) > 1e-9 or len(self.cause_shares) != 5:
            raise ConfigurationError("cause_shares must be 5 fractions summing to 1")
        end_month = month_index(*self.start) + self.n_months - 1
        if end_month > 179:
            raise ConfigurationError("scenario months run past the study window")

    @property
    def covid_window(self):
        if self.covid_start is None or self.covid_end is None:
            return None
        return (self.covid_start, self.covid_end)

    @property
    def n_records(self) -> int:
        if self.total_records is not None:
            return self.total_records
        return self.n_months * self.records_per_month


@dataclass
class SimulatedData:
    records: list[ObservationRecord]
    design: DesignMatrix
    truth: ParameterVector


def default_scenario(seed: int = 20240817) -> ScenarioConfig:
    """Desk-scale recovery scenario: 3 clusters, 48 months, 2000 records."""
    truth = ParameterVector(
        mu_alpha=-1.5,
        sigma_alpha=0.3,
        alpha_raw=np.array([1.0, -0.8, 0.2]),
        beta=np.array([0.3, 0.8, -0.1, 0.7]),
        gamma_raw=np.zeros(48),  # placeholder; auto_gamma redraws from the seed
        sigma_gamma=0.235,
        shock_factor=2.24,
        delta_covid=-0.267,
        phi=35.0,
    )
    return ScenarioConfig(
        total_records=2000, true_params=truth, auto_gamma=True, seed=seed, counts=CountProcess()
    )


_AUTO_GAMMA = "auto"


def load_scenario(path) -> ScenarioConfig:
    """Read a scenario from a plain key = value file.

    ``gamma_raw = auto`` (the default) redraws the true monthly offsets from
    their unit-normal prior using the scenario seed.
    """
    values: dict[str, str] = {}
    with open(path, encoding="utf-8") as handle:
        for lineno, raw in enumerate(handle, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigurationError(f"{path}: line {lineno}: expected key = value")
            key, value = (part.strip() for part in line.split("=", 1))
            values[key] = value

    def floats(key, default):
        if key not in values:
            return default
        return tuple(float(v) for v in values.pop(key).split(","))

    def scalar(key, default, cast=float):
        return cast(values.pop(key)) if key in values else default

    def year_month(key, default):
        if key not in values:
            return default
        text = values.pop(key)
        return None if text.lower() == "none" else parse_year_month(text)

    scenario = ScenarioConfig(
        n_clusters=scalar("n_clusters", 3, int),
        n_months=scalar("n_months", 48, int),
        records_per_month=scalar("records_per_month", 42, int),
        total_records=scalar("total_records", None, int) if "total_records" in values else None,
        n_airports=scalar("n_airports", 12, int),
        carriers=tuple(values.pop("carriers").split(",")) if "carriers" in values else ("AA", "BB"),
        start=year_month("start", (2010, 1)),
        covid_start=year_month("covid_start", (2012, 1)),
        covid_end=year_month("covid_end", (2012, 12)),
        volume_log_means=floats("volume_log_means", (8.0, 5.0, 6.5)),
        volume_log_sd=scalar("volume_log_sd", 0.35),
        counts=CountProcess(
            weather=floats("count_weather", (2.0, 1.5)),
            nas=floats("count_nas", (8.0, 2.5)),
            security=floats("count_security", (0.5, 0.8)),
            late=floats("count_late", (8.0, 2.5)),
        ),
        cause_shares=floats("cause_shares", _DEFAULT_SHARES),
        apportion_concentration=scalar("apportion_concentration", 200.0),
        seed=scalar("seed", 0, int),
    )
    gamma_text = values.pop("gamma_raw", _AUTO_GAMMA)
    gamma_raw = (
        np.zeros(scenario.n_months)
        if gamma_text == _AUTO_GAMMA
        else np.array([float(v) for v in gamma_text.split(",")])
    )
    scenario.auto_gamma = gamma_text == _AUTO_GAMMA
    scenario.true_params = ParameterVector(
        mu_alpha=scalar("mu_alpha", -1.5),
        sigma_alpha=scalar("sigma_alpha", 0.3),
        alpha_raw=np.array(floats("alpha_raw", (1.0, -0.8, 0.2))),
        beta=np.array(floats("beta", (0.3, 0.8, -0.1, 0.7))),
        gamma_raw=gamma_raw,
        sigma_gamma=scalar("sigma_gamma", 0.235),
        shock_factor=scalar("shock_factor", 2.24),
        delta_covid=scalar("delta_covid", -0.267),
        phi=scalar("phi", 35.0),
    )
    if gamma_text != _AUTO_GAMMA and len(gamma_raw) != scenario.n_months:
        raise ConfigurationError("gamma_raw must list one offset per month")
    if values:
        raise ConfigurationError(f"{path}: unknown keys {sorted(values)}")
    return scenario


def _cluster_of(airport_index: int, n_airports: int, J: int) -> int:
    return airport_index * J // n_airports


def simulate_dataset(config: ScenarioConfig, seed: int | None = None) -> SimulatedData:
    """Generate one synthetic panel; deterministic given the seed.

    With ``auto_gamma`` set, the true monthly offsets are redrawn from their
    unit-normal prior first, so the returned truth is always fully
    specified.
    """
    if config.true_params is None:
        raise ConfigurationError("scenario lacks true parameters")
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(config.seed if seed is None else seed)))
    truth = config.true_params
    J, T = config.n_clusters, config.n_months
    if truth.J != J or truth.T != T:
        raise ConfigurationError("true parameter dimensions do not match the scenario")
    if config.auto_gamma:
        truth = replace(truth, gamma_raw=rng.standard_normal(T))

    size = config.n_records
    month_of = np.arange(size) % T
    airport_of = rng.integers(0, config.n_airports, size=size)
    carrier_of = rng.integers(0, len(config.carriers), size=size)
    cluster_of = np.array([_cluster_of(a, config.n_airports, J) for a in airport_of])

    log_mean = np.array(config.volume_log_means)[cluster_of]
    n = np.maximum(1, np.rint(np.exp(rng.normal(log_mean, config.volume_log_sd)))).astype(np.int64)

    raw_counts = config.counts.draw(rng, size)

    month0 = month_index(*config.start)
    design = design_from_arrays(
        n=n.astype(float),
        y=np.zeros(size),
        raw_counts=raw_counts,
        cluster_idx=cluster_of,
        month_idx=month_of,
        J=J,
        T=T,
        month0=month0,
        covid_window=config.covid_window,
    )

    gamma = truth.gamma(design.month_covid)
    eta = (
        truth.alpha()[cluster_of]
        + design.X @ truth.beta
        + gamma[month_of]
        + truth.delta_covid * design.covid
    )
    # Same clamp as the fitted likelihood, and it keeps the Beta shape
    # parameters strictly positive under extreme prior draws.
    p = expit(np.clip(eta, -ETA_CLAMP, ETA_CLAMP))
    p_tilde = rng.beta(p * truth.phi, (1.0 - p) * truth.phi)
    y = rng.binomial(n, p_tilde).astype(float)

    shares = rng.dirichlet(config.apportion_concentration * np.asarray(config.cause_shares), size=size)
    cause_counts = shares * y[:, None]

    design = DesignMatrix(
        n=design.n,
        y=y,
        X=design.X,
        cluster_idx=design.cluster_idx,
        month_idx=design.month_idx,
        covid=design.covid,
        month_covid=design.month_covid,
        grand_means=design.grand_means,
        J=J,
        T=T,
        month0=month0,
    )

    records = []
    for i in range(size):
        absolute = month0 + int(month_of[i])
        records.append(
            ObservationRecord(
                year=2010 + absolute // 12,
                month=absolute % 12 + 1,
                airport=f"S{airport_of[i]:02d}",
                carrier=config.carriers[carrier_of[i]],
                arr_flights=float(n[i]),
                arr_del15=float(y[i]),
                carrier_ct=float(cause_counts[i, 0]),
                weather_ct=float(cause_counts[i, 1]),
                nas_ct=float(cause_counts[i, 2]),
                security_ct=float(cause_counts[i, 3]),
                late_aircraft_ct=float(cause_counts[i, 4]),
            )
        )
    return SimulatedData(records=records, design=design, truth=truth)


def draw_prior_params(rng, J: int, T: int, priors: ModelConfig | None = None) -> ParameterVector:
    """One draw of the full parameter vector from its priors."""
    cfg = priors if priors is not None else ModelConfig()
    return ParameterVector(
        mu_alpha=rng.normal(cfg.mu_alpha_loc, cfg.mu_alpha_scale),
        sigma_alpha=abs(rng.normal(0.0, cfg.sigma_alpha_scale)),
        alpha_raw=rng.standard_normal(J),
        beta=rng.normal(0.0, cfg.beta_scale, size=4),
        gamma_raw=rng.standard_normal(T),
        sigma_gamma=cfg.sigma_gamma_scale * abs(rng.standard_cauchy()),
        shock_factor=1.0 + abs(rng.normal(0.0, cfg.shock_scale)),
        delta_covid=rng.normal(0.0, cfg.delta_covid_scale),
        phi=rng.exponential(1.0 / cfg.phi_rate),
    )


def prior_predictive(
    scenario: ScenarioConfig,
    n_draws: int,
    seed: int,
    priors: ModelConfig | None = None,
    include_data: bool = True,
):
    """Draw parameters from the priors and run the generator under each.

    Returns a list of (ParameterVector, SimulatedData | None) pairs; pass
    include_data=False to inspect implied parameters without paying for the
    datasets.
    """
    if n_draws < 1:
        raise ValueError("n_draws must be >= 1")
    root = np.random.SeedSequence(seed)
    param_rng = np.random.Generator(np.random.Philox(root.spawn(1)[0]))
    out = []
    for i in range(n_draws):
        params = draw_prior_params(param_rng, scenario.n_clusters, scenario.n_months, priors)
        data = None
        if include_data:
            data = simulate_dataset(
                replace(scenario, true_params=params, auto_gamma=False), seed=seed + i + 1
            )
        out.append((params, data))
    return out
