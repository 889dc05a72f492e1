"""Three-level hierarchical Beta-Binomial logit model of monthly delay counts.

Observation i is a month of arrivals at one airport-carrier pair: y_i of n_i
arrivals delayed, with over-dispersion handled by a Beta-Binomial likelihood
whose Beta mixing density has mean p_i and concentration phi.  The log-odds
of p_i decompose into a cluster intercept (non-centered: global mean plus
unit-normal deviation times a scale), four centered delay-cause predictors
with carrier delays as the implicit baseline, a sum-to-zero monthly offset,
and a pandemic mean shift.  Months inside the configured pandemic window get
their offset scale multiplied by an amplification factor >= 1, sequestering
the 2020-2022 volatility from the causal coefficients.

Everything the sampler needs is exposed as a single evaluation of the
unnormalized log posterior and its analytic gradient over an unconstrained
vector; positive parameters are log-transformed (the amplification factor via
log(value - 1)) with the Jacobian terms included.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import digamma, expit, gammaln

from .ingest import ConfigurationError, month_index, parse_year_month

__all__ = [
    "FACTORS",
    "ETA_CLAMP",
    "DomainError",
    "MappingError",
    "ModelConfig",
    "DesignMatrix",
    "ParameterVector",
    "build_design",
    "design_from_arrays",
    "design_to_files",
    "design_from_files",
    "param_names",
    "derived_names",
    "unconstrain",
    "constrain",
    "log_prior",
    "log_likelihood",
    "LogPosterior",
]

FACTORS = ("weather", "nas", "security", "late")
_FACTOR_COLUMNS = ("weather_ct", "nas_ct", "security_ct", "late_aircraft_ct")

# Log-odds clamp: expit(+-35) stays strictly inside (0, 1) in float64, so the
# Beta-Binomial shape parameters never collapse to zero.
ETA_CLAMP = 35.0


class DomainError(ValueError):
    """A parameter violates its support (non-positive scale, factor < 1)."""


class MappingError(KeyError):
    """A record's airport has no cluster label."""


@dataclass
class ModelConfig:
    """Prior hyperparameters and pandemic window; defaults match the study.

    An empty configuration file reproduces these defaults.
    """

    mu_alpha_loc: float = -1.5
    mu_alpha_scale: float = 1.0
    sigma_alpha_scale: float = 0.5
    beta_scale: float = 0.5
    sigma_gamma_scale: float = 0.5
    shock_scale: float = 2.0
    delta_covid_scale: float = 1.0
    phi_rate: float = 1.0
    covid_start: tuple[int, int] = (2020, 1)
    covid_end: tuple[int, int] = (2022, 12)
    z_scale_predictors: bool = False

    @classmethod
    def from_file(cls, path) -> "ModelConfig":
        """Read a plain key = value file; unknown keys fail loudly."""
        config = cls()
        with open(path, encoding="utf-8") as handle:
            for lineno, raw in enumerate(handle, start=1):
                line = raw.split("#", 1)[0].strip()
                if not line:
                    continue
                if "=" not in line:
                    raise ConfigurationError(f"{path}: line {lineno}: expected key = value")
                key, value = (part.strip() for part in line.split("=", 1))
                if key in ("covid_start", "covid_end"):
                    setattr(config, key, parse_year_month(value))
                elif key == "z_scale_predictors":
                    config.z_scale_predictors = value.lower() in ("1", "true", "yes", "on")
                elif hasattr(config, key):
                    setattr(config, key, float(value))
                else:
                    raise ConfigurationError(f"{path}: line {lineno}: unknown key {key!r}")
        return config

    @property
    def covid_window(self) -> tuple[tuple[int, int], tuple[int, int]]:
        return (self.covid_start, self.covid_end)


@dataclass
class DesignMatrix:
    """Model-ready arrays for one record set.

    Month indices are rebased so t = 0 is the earliest month present
    (absolute index ``month0``); ``month_covid`` flags every design month
    inside the pandemic window, including months with no observations.
    """

    n: np.ndarray
    y: np.ndarray
    X: np.ndarray
    cluster_idx: np.ndarray
    month_idx: np.ndarray
    covid: np.ndarray
    month_covid: np.ndarray
    grand_means: np.ndarray
    J: int
    T: int
    month0: int
    ln_choose: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        self.n = np.asarray(self.n, dtype=float)
        self.y = np.asarray(self.y, dtype=float)
        self.X = np.asarray(self.X, dtype=float)
        self.cluster_idx = np.asarray(self.cluster_idx, dtype=np.intp)
        self.month_idx = np.asarray(self.month_idx, dtype=np.intp)
        self.covid = np.asarray(self.covid, dtype=float)
        self.month_covid = np.asarray(self.month_covid, dtype=bool)
        self.grand_means = np.asarray(self.grand_means, dtype=float)
        if self.J < 1 or self.T < 1:
            raise ValueError("design needs J >= 1 and T >= 1")
        if np.any(self.y > self.n) or np.any(self.y < 0):
            raise ValueError("need 0 <= y_i <= n_i")
        if self.n.size and (self.cluster_idx.max() >= self.J or self.month_idx.max() >= self.T):
            raise ValueError("cluster or month index out of range")
        if self.month_covid.shape != (self.T,):
            raise ValueError("month_covid must have one flag per design month")
        if self.ln_choose is None:
            self.ln_choose = (
                gammaln(self.n + 1.0) - gammaln(self.y + 1.0) - gammaln(self.n - self.y + 1.0)
            )

    @property
    def size(self) -> int:
        return self.n.shape[0]


def _covid_index_range(covid_window) -> tuple[int, int] | None:
    if covid_window is None:
        return None
    (y0, m0), (y1, m1) = covid_window
    start, end = month_index(y0, m0), month_index(y1, m1)
    if end < start:
        raise ConfigurationError("covid window end precedes start")
    return start, end


def design_from_arrays(
    n,
    y,
    raw_counts,
    cluster_idx,
    month_idx,
    J: int,
    T: int,
    month0: int,
    covid_window=None,
    grand_means=None,
    z_scale: bool = False,
) -> DesignMatrix:
    """Assemble a design from raw factor counts, centering on grand means.

    ``raw_counts`` is (N, 4) in factor order (weather, nas, security, late).
    When ``grand_means`` is given (e.g. full-horizon means reused for an
    epoch-restricted design) the exact-zero centering identity is not
    guaranteed to hold.
    """
    raw_counts = np.asarray(raw_counts, dtype=float)
    if grand_means is None:
        grand_means = raw_counts.mean(axis=0) if raw_counts.size else np.zeros(4)
    grand_means = np.asarray(grand_means, dtype=float)
    X = raw_counts - grand_means
    if z_scale and X.size:
        sd = X.std(axis=0)
        if np.any(sd <= 0):
            bad = FACTORS[int(np.argmin(sd))]
            raise DomainError(f"cannot z-scale constant predictor {bad}")
        X = X / sd
    window = _covid_index_range(covid_window)
    months_abs = month0 + np.arange(T)
    if window is None:
        month_covid = np.zeros(T, dtype=bool)
    else:
        month_covid = (months_abs >= window[0]) & (months_abs <= window[1])
    month_idx = np.asarray(month_idx, dtype=np.intp)
    covid = month_covid[month_idx].astype(float) if len(month_idx) else np.zeros(0)
    return DesignMatrix(
        n=n,
        y=y,
        X=X,
        cluster_idx=cluster_idx,
        month_idx=month_idx,
        covid=covid,
        month_covid=month_covid,
        grand_means=grand_means,
        J=J,
        T=T,
        month0=month0,
    )


def build_design(records, assignment, covid_window=None, grand_means=None, z_scale=False) -> DesignMatrix:
    """Build the design for a record set under a cluster assignment.

    Month indices are rebased to the records' earliest month; the four
    predictors are the per-cause counts centered on their grand means over
    the input records (or on supplied means, for cross-epoch comparability).
    """
    records = list(records)
    if not records:
        raise ValueError("cannot build a design from zero records")
    labels = assignment.labels if hasattr(assignment, "labels") else dict(assignment)
    for r in records:
        if r.airport not in labels:
            raise MappingError(f"airport {r.airport!r} has no cluster label")
    months = np.array([r.month_idx for r in records], dtype=np.intp)
    month0 = int(months.min())
    raw_counts = np.array(
        [[getattr(r, column) for column in _FACTOR_COLUMNS] for r in records], dtype=float
    )
    return design_from_arrays(
        n=[r.arr_flights for r in records],
        y=[r.arr_del15 for r in records],
        raw_counts=raw_counts,
        cluster_idx=[labels[r.airport] for r in records],
        month_idx=months - month0,
        J=max(labels.values()) + 1,
        T=int(months.max()) - month0 + 1,
        month0=month0,
        covid_window=covid_window,
        grand_means=grand_means,
        z_scale=z_scale,
    )


_DESIGN_COLUMNS = (
    "n",
    "y",
    "cluster_idx",
    "month_idx",
    "covid_flag",
    "x_weather",
    "x_nas",
    "x_security",
    "x_late",
)


def design_to_files(design: DesignMatrix, path) -> None:
    """Write a design as CSV plus a JSON sidecar (<path>.meta.json)."""
    import csv as _csv

    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = _csv.writer(handle)
        writer.writerow(_DESIGN_COLUMNS)
        for i in range(design.size):
            writer.writerow(
                [
                    repr(float(design.n[i])),
                    repr(float(design.y[i])),
                    int(design.cluster_idx[i]),
                    int(design.month_idx[i]),
                    int(design.covid[i]),
                ]
                + [repr(float(v)) for v in design.X[i]]
            )
    meta = {
        "J": design.J,
        "T": design.T,
        "month0": design.month0,
        "month_covid": design.month_covid.astype(int).tolist(),
        "grand_means": design.grand_means.tolist(),
    }
    with open(str(path) + ".meta.json", "w", encoding="utf-8") as handle:
        json.dump(meta, handle, indent=1, sort_keys=True)


def design_from_files(path) -> DesignMatrix:
    import csv as _csv

    with open(str(path) + ".meta.json", encoding="utf-8") as handle:
        meta = json.load(handle)
    rows = []
    with open(path, newline="", encoding="utf-8") as handle:
        reader = _csv.reader(handle)
        header = next(reader)
        if tuple(header) != _DESIGN_COLUMNS:
            raise ValueError(f"{path}: unexpected design columns {header}")
        for row in reader:
            rows.append([float(v) for v in row])
    data = np.array(rows, dtype=float) if rows else np.zeros((0, len(_DESIGN_COLUMNS)))
    return DesignMatrix(
        n=data[:, 0],
        y=data[:, 1],
        X=data[:, 5:9],
        cluster_idx=data[:, 2].astype(np.intp),
        month_idx=data[:, 3].astype(np.intp),
        covid=data[:, 4],
        month_covid=np.array(meta["month_covid"], dtype=bool),
        grand_means=np.array(meta["grand_means"], dtype=float),
        J=int(meta["J"]),
        T=int(meta["T"]),
        month0=int(meta["month0"]),
    )


@dataclass(eq=False)
class ParameterVector:
    """All latent quantities in constrained form.

    Scales may be zero only for generative edge cases (e.g. collapsing the
    cluster hierarchy); the prior density requires strict positivity.
    """

    mu_alpha: float
    sigma_alpha: float
    alpha_raw: np.ndarray
    beta: np.ndarray
    gamma_raw: np.ndarray
    sigma_gamma: float
    shock_factor: float
    delta_covid: float
    phi: float

    def __post_init__(self):
        self.alpha_raw = np.asarray(self.alpha_raw, dtype=float)
        self.beta = np.asarray(self.beta, dtype=float)
        self.gamma_raw = np.asarray(self.gamma_raw, dtype=float)
        if self.beta.shape != (4,):
            raise ValueError("beta must hold 4 factor sensitivities")
        if min(self.sigma_alpha, self.sigma_gamma, self.phi) < 0 or self.shock_factor < 1:
            raise DomainError("scales must be >= 0 and shock_factor >= 1")

    @property
    def J(self) -> int:
        return self.alpha_raw.shape[0]

    @property
    def T(self) -> int:
        return self.gamma_raw.shape[0]

    @property
    def dim(self) -> int:
        return self.J + self.T + 10

    def alpha(self) -> np.ndarray:
        """Cluster intercepts mu_alpha + alpha_raw * sigma_alpha."""
        return self.mu_alpha + self.alpha_raw * self.sigma_alpha

    def gamma_scales(self, month_covid) -> np.ndarray:
        mult = np.where(np.asarray(month_covid, dtype=bool), self.shock_factor, 1.0)
        return self.sigma_gamma * mult

    def gamma(self, month_covid) -> np.ndarray:
        """Monthly offsets: centered raw offsets times regime-dependent scale.

        The centered offsets divided by their scales sum to zero exactly; the
        plain offsets sum to zero only when no pandemic window is configured.
        """
        centered = self.gamma_raw - self.gamma_raw.mean()
        return centered * self.gamma_scales(month_covid)

    def to_array(self) -> np.ndarray:
        return np.concatenate(
            [
                [self.mu_alpha, self.sigma_alpha],
                self.alpha_raw,
                self.beta,
                self.gamma_raw,
                [self.sigma_gamma, self.shock_factor, self.delta_covid, self.phi],
            ]
        )

    @classmethod
    def from_array(cls, theta, J: int, T: int) -> "ParameterVector":
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (J + T + 10,):
            raise ValueError(f"expected dimension {J + T + 10}, got {theta.shape}")
        return cls(
            mu_alpha=float(theta[0]),
            sigma_alpha=float(theta[1]),
            alpha_raw=theta[2 : 2 + J].copy(),
            beta=theta[2 + J : 6 + J].copy(),
            gamma_raw=theta[6 + J : 6 + J + T].copy(),
            sigma_gamma=float(theta[6 + J + T]),
            shock_factor=float(theta[7 + J + T]),
            delta_covid=float(theta[8 + J + T]),
            phi=float(theta[9 + J + T]),
        )


def param_names(J: int, T: int) -> list[str]:
    return (
        ["mu_alpha", "sigma_alpha"]
        + [f"alpha_raw_{j}" for j in range(J)]
        + [f"beta_{f}" for f in FACTORS]
        + [f"gamma_raw_{t}" for t in range(T)]
        + ["sigma_gamma", "shock_factor", "delta_covid", "phi"]
    )


def derived_names(J: int, T: int) -> list[str]:
    return [f"alpha_{j}" for j in range(J)] + [f"gamma_{t}" for t in range(T)]


def _positions(J: int, T: int) -> dict[str, int]:
    return {
        "sigma_alpha": 1,
        "sigma_gamma": 6 + J + T,
        "shock_factor": 7 + J + T,
        "phi": 9 + J + T,
    }


def unconstrain(theta, J: int, T: int) -> np.ndarray:
    """Map a constrained flat vector to sampler space (log scales,
    log(shock_factor - 1)); round-trips with constrain to 1e-12."""
    u = np.asarray(theta, dtype=float).copy()
    pos = _positions(J, T)
    for name in ("sigma_alpha", "sigma_gamma", "phi"):
        u[pos[name]] = math.log(theta[pos[name]])
    u[pos["shock_factor"]] = math.log(theta[pos["shock_factor"]] - 1.0)
    return u


def constrain(u, J: int, T: int) -> np.ndarray:
    theta = np.asarray(u, dtype=float).copy()
    pos = _positions(J, T)
    for name in ("sigma_alpha", "sigma_gamma", "phi"):
        theta[pos[name]] = math.exp(u[pos[name]])
    theta[pos["shock_factor"]] = 1.0 + math.exp(u[pos["shock_factor"]])
    return theta


_LOG_2PI = math.log(2.0 * math.pi)


def _normal_logpdf(x, loc, scale):
    return -0.5 * _LOG_2PI - math.log(scale) - 0.5 * ((x - loc) / scale) ** 2


def _half_normal_logpdf(x, scale):
    return math.log(2.0) - 0.5 * _LOG_2PI - math.log(scale) - 0.5 * (x / scale) ** 2


def _half_cauchy_logpdf(x, scale):
    return math.log(2.0) - math.log(math.pi) - math.log(scale) - math.log1p((x / scale) ** 2)


def log_prior(params: ParameterVector, config: ModelConfig | None = None) -> float:
    """Joint log prior density at a constrained parameter point."""
    if config is None:
        config = ModelConfig()
    if min(params.sigma_alpha, params.sigma_gamma, params.phi) <= 0:
        raise DomainError("scale parameters must be strictly positive")
    if params.shock_factor < 1:
        raise DomainError("shock_factor must be >= 1")
    value = _normal_logpdf(params.mu_alpha, config.mu_alpha_loc, config.mu_alpha_scale)
    value += _half_normal_logpdf(params.sigma_alpha, config.sigma_alpha_scale)
    value += sum(_normal_logpdf(a, 0.0, 1.0) for a in params.alpha_raw)
    value += sum(_normal_logpdf(b, 0.0, config.beta_scale) for b in params.beta)
    value += float(
        (-0.5 * _LOG_2PI - 0.5 * params.gamma_raw**2).sum()
    )
    value += _half_cauchy_logpdf(params.sigma_gamma, config.sigma_gamma_scale)
    value += _half_normal_logpdf(params.shock_factor - 1.0, config.shock_scale)
    value += _normal_logpdf(params.delta_covid, 0.0, config.delta_covid_scale)
    value += math.log(config.phi_rate) - config.phi_rate * params.phi
    return value


def _linear_predictor(params: ParameterVector, design: DesignMatrix) -> np.ndarray:
    alpha = params.alpha()
    gamma = params.gamma(design.month_covid)
    return (
        alpha[design.cluster_idx]
        + design.X @ params.beta
        + gamma[design.month_idx]
        + params.delta_covid * design.covid
    )


def log_likelihood(params: ParameterVector, design: DesignMatrix, counters: dict | None = None) -> float:
    """Beta-Binomial log likelihood of the design under the parameters.

    Log-odds are clamped to +-ETA_CLAMP before the inverse logit; clamped
    evaluations are tallied in counters['eta_clamped'] when a dict is given.
    """
    if design.size == 0:
        return 0.0
    eta = _linear_predictor(params, design)
    clipped = np.abs(eta) > ETA_CLAMP
    if clipped.any():
        eta = np.clip(eta, -ETA_CLAMP, ETA_CLAMP)
        if counters is not None:
            counters["eta_clamped"] = counters.get("eta_clamped", 0) + int(clipped.sum())
    # expit on both signs keeps 1 - p at full relative precision.
    p = expit(eta)
    q = expit(-eta)
    a = p * params.phi
    b = q * params.phi
    n, y = design.n, design.y
    value = (
        design.ln_choose
        + gammaln(y + a)
        + gammaln(n - y + b)
        - gammaln(n + params.phi)
        - gammaln(a)
        - gammaln(b)
    ).sum() + design.size * gammaln(params.phi)
    return float(value)


class LogPosterior:
    """Unnormalized log posterior and gradient over the unconstrained vector.

    Pure and reentrant: evaluations share only the immutable design, and the
    per-observation reduction order is fixed, so repeated runs are
    bit-reproducible.  Non-finite evaluations return (-inf, 0) and are
    tallied so the sampler can treat them as divergences.
    """

    def __init__(self, design: DesignMatrix, config: ModelConfig | None = None):
        self.design = design
        self.config = config if config is not None else ModelConfig()
        self.counters: dict[str, int] = {}
        self.dim = design.J + design.T + 10
        self.names = param_names(design.J, design.T)
        d = design
        self._mult_covid = d.month_covid.astype(float)

    def constrain_array(self, u) -> np.ndarray:
        return constrain(u, self.design.J, self.design.T)

    def params(self, u) -> ParameterVector:
        return ParameterVector.from_array(self.constrain_array(u), self.design.J, self.design.T)

    def derived(self, theta) -> np.ndarray:
        """Cluster intercepts and monthly offsets for a constrained vector."""
        params = ParameterVector.from_array(theta, self.design.J, self.design.T)
        return np.concatenate([params.alpha(), params.gamma(self.design.month_covid)])

    def __call__(self, u):
        return self.value_and_grad(u)

    def value_and_grad(self, u):
        d = self.design
        J, T = d.J, d.T
        cfg = self.config
        u = np.asarray(u, dtype=float)
        if not np.all(np.isfinite(u)):
            return self._flag_nonfinite(u)

        mu = u[0]
        u_sa = u[1]
        alpha_raw = u[2 : 2 + J]
        beta = u[2 + J : 6 + J]
        gamma_raw = u[6 + J : 6 + J + T]
        u_sg = u[6 + J + T]
        u_sh = u[7 + J + T]
        delta = u[8 + J + T]
        u_phi = u[9 + J + T]

        # exp cap keeps squares in the prior finite; the resulting huge
        # negative density is rejected by the sampler's slice anyway
        if max(u_sa, u_sg, u_sh, u_phi) > 300.0:
            return self._flag_nonfinite(u)
        with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
            sigma_a = math.exp(u_sa)
            sigma_g = math.exp(u_sg)
            h = math.exp(u_sh)
            shock = 1.0 + h
            phi = math.exp(u_phi)

            # Temporal layer: centered raw offsets scaled per regime.
            mult = 1.0 + (shock - 1.0) * self._mult_covid
            sf = sigma_g * mult
            gc = gamma_raw - gamma_raw.mean()
            gamma = gc * sf

            alpha = mu + sigma_a * alpha_raw
            eta = (
                alpha[d.cluster_idx]
                + d.X @ beta
                + gamma[d.month_idx]
                + delta * d.covid
            )
            clipped = np.abs(eta) > ETA_CLAMP
            n_clipped = int(clipped.sum())
            if n_clipped:
                eta = np.clip(eta, -ETA_CLAMP, ETA_CLAMP)
                self.counters["eta_clamped"] = self.counters.get("eta_clamped", 0) + n_clipped
            # expit on both signs keeps 1 - p at full relative precision.
            p = expit(eta)
            q = expit(-eta)
            a = p * phi
            b = q * phi

            n, y = d.n, d.y
            ll = float(
                (
                    d.ln_choose
                    + gammaln(y + a)
                    + gammaln(n - y + b)
                    - gammaln(n + phi)
                    - gammaln(a)
                    - gammaln(b)
                ).sum()
                + d.size * gammaln(phi)
            )

            dfda = digamma(y + a) - digamma(a)
            dfdb = digamma(n - y + b) - digamma(b)
            g_eta = phi * p * q * (dfda - dfdb)
            if n_clipped:
                g_eta = np.where(clipped, 0.0, g_eta)
            dll_dphi = float(
                (p * dfda + q * dfdb).sum()
                + d.size * digamma(phi)
                - digamma(n + phi).sum()
            )

            group_cluster = np.bincount(d.cluster_idx, weights=g_eta, minlength=J)
            group_month = np.bincount(d.month_idx, weights=g_eta, minlength=T)

            grad = np.empty_like(u)
            grad[0] = g_eta.sum() - (mu - cfg.mu_alpha_loc) / cfg.mu_alpha_scale**2
            grad[2 : 2 + J] = sigma_a * group_cluster - alpha_raw
            grad[2 + J : 6 + J] = d.X.T @ g_eta - beta / cfg.beta_scale**2

            gsf = group_month * sf
            grad[6 + J : 6 + J + T] = gsf - gsf.sum() / T - gamma_raw

            dll_dsa = float(group_cluster @ alpha_raw)
            d_sa = dll_dsa - sigma_a / cfg.sigma_alpha_scale**2
            grad[1] = sigma_a * d_sa + 1.0

            dll_dsg = float(group_month @ (gc * mult))
            d_sg = dll_dsg - 2.0 * sigma_g / (cfg.sigma_gamma_scale**2 + sigma_g**2)
            grad[6 + J + T] = sigma_g * d_sg + 1.0

            dll_dshock = sigma_g * float(group_month @ (gc * self._mult_covid))
            d_h = dll_dshock - h / cfg.shock_scale**2
            grad[7 + J + T] = h * d_h + 1.0

            grad[8 + J + T] = float(g_eta @ d.covid) - delta / cfg.delta_covid_scale**2

            d_phi = dll_dphi - cfg.phi_rate
            grad[9 + J + T] = phi * d_phi + 1.0

            prior = _normal_logpdf(mu, cfg.mu_alpha_loc, cfg.mu_alpha_scale)
            prior += _half_normal_logpdf(sigma_a, cfg.sigma_alpha_scale)
            prior += float((-0.5 * _LOG_2PI - 0.5 * alpha_raw**2).sum())
            prior += float(
                (4 * (-0.5 * _LOG_2PI - math.log(cfg.beta_scale)))
                - 0.5 * float(beta @ beta) / cfg.beta_scale**2
            )
            prior += float((-0.5 * _LOG_2PI - 0.5 * gamma_raw**2).sum())
            prior += _half_cauchy_logpdf(sigma_g, cfg.sigma_gamma_scale)
            prior += _half_normal_logpdf(h, cfg.shock_scale)
            prior += _normal_logpdf(delta, 0.0, cfg.delta_covid_scale)
            prior += math.log(cfg.phi_rate) - cfg.phi_rate * phi

            jacobian = u_sa + u_sg + u_sh + u_phi
            value = ll + prior + jacobian

        if not math.isfinite(value) or not np.all(np.isfinite(grad)):
            return self._flag_nonfinite(u)
        return value, grad

    def _flag_nonfinite(self, u):
        self.counters["nonfinite"] = self.counters.get("nonfinite", 0) + 1
        return -math.inf, np.zeros_like(np.asarray(u, dtype=float))
