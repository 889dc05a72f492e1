import math

import numpy as np
import pytest
from scipy.integrate import quad
from scipy.special import expit, logit
from scipy.stats import binom, cauchy, expon, halfnorm, norm

from airdelay.ingest import ConfigurationError
from airdelay.model import (
    DomainError,
    LogPosterior,
    MappingError,
    ModelConfig,
    ParameterVector,
    build_design,
    constrain,
    design_from_arrays,
    design_from_files,
    design_to_files,
    log_likelihood,
    log_prior,
    param_names,
    unconstrain,
)
from airdelay.simulate import simulate_dataset

from conftest import make_record, small_scenario, small_truth


def single_obs_design(n, y, J=1, T=1):
    return design_from_arrays(
        n=[n],
        y=[y],
        raw_counts=np.zeros((1, 4)),
        cluster_idx=[0],
        month_idx=[0],
        J=J,
        T=T,
        month0=0,
    )


def point_params(eta, phi, J=1, T=1):
    """Parameters that put the linear predictor exactly at eta."""
    return ParameterVector(
        mu_alpha=eta,
        sigma_alpha=0.0,
        alpha_raw=np.zeros(J),
        beta=np.zeros(4),
        gamma_raw=np.zeros(T),
        sigma_gamma=0.0,
        shock_factor=1.0,
        delta_covid=0.0,
        phi=phi,
    )


def mpmath_logpmf(n, y, eta, phi):
    """Closed-form Beta-Binomial log-pmf under 50-digit log-gamma."""
    from mpmath import loggamma, mp, mpf

    mp.dps = 50
    p = mpf(float(expit(eta)))
    q = mpf(float(expit(-eta)))
    n, y, phi = mpf(n), mpf(y), mpf(phi)
    a, b = p * phi, q * phi
    value = (
        loggamma(n + 1)
        - loggamma(y + 1)
        - loggamma(n - y + 1)
        + loggamma(y + a)
        + loggamma(n - y + b)
        - loggamma(n + phi)
        - loggamma(a)
        - loggamma(b)
        + loggamma(phi)
    )
    return float(value)


class TestBuildDesign:
    def records_three_security(self):
        return [
            make_record(month=m, n=100, y=10, causes=(10 - s, 0, 0, s, 0))
            for m, s in zip((1, 2, 3), (0.0, 1.0, 2.0))
        ]

    def test_centering_arithmetic(self):
        design = build_design(self.records_three_security(), {"ORD": 0})
        security = design.X[:, 2]
        assert security == pytest.approx([-1.0, 0.0, 1.0])
        assert design.grand_means[2] == pytest.approx(1.0)

    def test_covid_flags(self):
        records = [
            make_record(year=2019, month=12, n=100, y=10),
            make_record(year=2021, month=6, n=100, y=10),
        ]
        design = build_design(records, {"ORD": 0}, covid_window=((2020, 1), (2022, 12)))
        assert design.covid.tolist() == [0.0, 1.0]
        assert design.month_covid[design.month_idx[1]]
        assert not design.month_covid[design.month_idx[0]]

    def test_carrier_counts_never_enter_predictors(self):
        base = self.records_three_security()
        shifted = [
            make_record(
                month=r.month, n=r.arr_flights, y=r.arr_del15,
                causes=(r.carrier_ct, r.weather_ct, r.nas_ct, r.security_ct, r.late_aircraft_ct),
            )
            for r in base
        ]
        # same records with carrier counts zeroed out and dumped on weather
        swapped = [
            make_record(
                month=r.month, n=r.arr_flights, y=r.arr_del15,
                causes=(0.0, r.weather_ct + r.carrier_ct, r.nas_ct, r.security_ct, r.late_aircraft_ct),
            )
            for r in base
        ]
        d1 = build_design(shifted, {"ORD": 0})
        d2 = build_design(swapped, {"ORD": 0})
        assert d1.X.shape == (3, 4)
        # security column identical; weather column differs by the dumped carrier mass
        assert np.allclose(d1.X[:, 2], d2.X[:, 2])

    def test_missing_airport_mapping(self):
        with pytest.raises(MappingError, match="ORD"):
            build_design([make_record()], {"LGA": 0})

    def test_centering_identity_on_simulated_panel(self):
        data = simulate_dataset(small_scenario(records=300))
        sums = np.abs(data.design.X.sum(axis=0))
        assert np.all(sums < 1e-6 * data.design.size)

    def test_grand_mean_reuse_breaks_self_centering(self):
        records = self.records_three_security()
        external = np.array([0.0, 0.0, 5.0, 0.0])
        design = build_design(records, {"ORD": 0}, grand_means=external)
        assert design.X[:, 2] == pytest.approx([-5.0, -4.0, -3.0])

    def test_z_scale_flag(self):
        records = [
            make_record(month=m, n=100, y=20, causes=(20 - 3 * c, c, c, c / 2, c / 2))
            for m, c in zip((1, 2, 3), (1.0, 2.0, 4.0))
        ]
        design = build_design(records, {"ORD": 0}, z_scale=True)
        assert np.allclose(design.X.std(axis=0), 1.0)

    def test_round_trip_through_files(self, tmp_path):
        data = simulate_dataset(small_scenario(records=50))
        path = tmp_path / "design.csv"
        design_to_files(data.design, path)
        loaded = design_from_files(path)
        assert np.array_equal(loaded.n, data.design.n)
        assert np.array_equal(loaded.X, data.design.X)
        assert np.array_equal(loaded.month_covid, data.design.month_covid)
        assert loaded.J == data.design.J and loaded.T == data.design.T


class TestLogPrior:
    def test_matches_scipy_closed_forms(self):
        params = ParameterVector(
            mu_alpha=-1.2,
            sigma_alpha=0.4,
            alpha_raw=np.array([0.3, -0.7]),
            beta=np.array([0.1, -0.2, 0.05, 0.3]),
            gamma_raw=np.array([0.5, -0.5, 1.0]),
            sigma_gamma=0.3,
            shock_factor=2.0,
            delta_covid=-0.25,
            phi=12.0,
        )
        expected = (
            norm.logpdf(-1.2, -1.5, 1.0)
            + halfnorm.logpdf(0.4, scale=0.5)
            + norm.logpdf(params.alpha_raw).sum()
            + norm.logpdf(params.beta, scale=0.5).sum()
            + norm.logpdf(params.gamma_raw).sum()
            + (cauchy.logpdf(0.3, scale=0.5) + math.log(2.0))
            + halfnorm.logpdf(1.0, scale=2.0)
            + norm.logpdf(-0.25)
            + expon.logpdf(12.0)
        )
        assert log_prior(params) == pytest.approx(expected, abs=1e-12)

    def test_mode_contribution_of_global_intercept(self):
        at_mode = small_truth(mu_alpha=-1.5)
        away = small_truth(mu_alpha=0.0)
        assert log_prior(at_mode) - log_prior(away) == pytest.approx(0.5 * 1.5**2)

    def test_exponential_concentration_term(self):
        assert log_prior(small_truth(phi=2.0)) - log_prior(small_truth(phi=1.0)) == pytest.approx(-1.0)

    def test_half_cauchy_closed_form_at_half(self):
        # density integrates to one and the log value matches the closed form
        pdf = lambda x: 2.0 / (math.pi * 0.5 * (1.0 + (x / 0.5) ** 2))
        total, _ = quad(pdf, 0, np.inf)
        assert total == pytest.approx(1.0, abs=1e-9)
        expected = math.log(2.0 / (0.5 * math.pi)) + math.log(0.5)
        delta = log_prior(small_truth(sigma_gamma=0.5)) - log_prior(small_truth(sigma_gamma=1.0))
        base = math.log(2.0 / (0.5 * math.pi)) + math.log(0.25 / (0.25 + 1.0))
        assert delta == pytest.approx(expected - base, abs=1e-12)

    def test_domain_errors(self):
        with pytest.raises(DomainError):
            log_prior(small_truth(sigma_alpha=0.0))
        with pytest.raises(DomainError):
            log_prior(small_truth(phi=0.0))
        with pytest.raises(DomainError):
            small_truth(shock_factor=0.5)


class TestLogLikelihood:
    def test_uniform_beta_single_bernoulli(self):
        # n=1, y=0, eta=0 (p=1/2), phi=2: pmf = B(1,2)/B(1,1) = 1/2
        value = log_likelihood(point_params(0.0, 2.0), single_obs_design(1.0, 0.0))
        assert value == pytest.approx(math.log(0.5), abs=1e-12)

    def test_two_trials_one_success(self):
        # n=2, y=1, p=1/2, phi=2: pmf = 2 B(2,2)/B(1,1) = 1/3
        value = log_likelihood(point_params(0.0, 2.0), single_obs_design(2.0, 1.0))
        assert value == pytest.approx(math.log(1.0 / 3.0), abs=1e-12)

    def test_against_high_precision_log_gamma(self, rng):
        worst = 0.0
        for _ in range(100):
            n = float(rng.integers(1, 201))
            y = float(rng.integers(0, int(n) + 1))
            eta = logit(rng.uniform(0.01, 0.99))
            phi = float(rng.uniform(0.1, 100.0))
            mine = log_likelihood(point_params(eta, phi), single_obs_design(n, y))
            oracle = mpmath_logpmf(n, y, eta, phi)
            worst = max(worst, abs(mine - oracle))
        assert worst < 1e-10

    def test_named_example_n50(self):
        eta = logit(0.3)
        value = log_likelihood(point_params(eta, 35.0), single_obs_design(50.0, 12.0))
        assert value == pytest.approx(mpmath_logpmf(50.0, 12.0, eta, 35.0), abs=1e-11)

    def test_binomial_limit_at_large_phi(self):
        # The gap scales like [y^2/p + (n-y)^2/q - n^2] / (2 phi), so the
        # limit statement is about outcomes carrying mass; several sigma
        # into a tail the gap lawfully exceeds the tolerance.
        for n in (1, 10, 50, 100):
            for p in (0.1, 0.3, 0.5, 0.9):
                for y in {0, n // 4, n // 2, (3 * n) // 4, n}:
                    reference = binom.logpmf(y, n, p)
                    if reference < -10.0:
                        continue
                    mine = log_likelihood(
                        point_params(logit(p), 1e6), single_obs_design(float(n), float(y))
                    )
                    assert mine == pytest.approx(reference, abs=1e-3)

    def test_eta_clamp_counts_saturation(self):
        counters = {}
        value = log_likelihood(point_params(80.0, 2.0), single_obs_design(5.0, 5.0), counters)
        assert math.isfinite(value)
        assert counters["eta_clamped"] == 1

    def test_empty_design_contributes_nothing(self):
        design = design_from_arrays(
            n=[], y=[], raw_counts=np.zeros((0, 4)), cluster_idx=[], month_idx=[],
            J=2, T=4, month0=0,
        )
        assert log_likelihood(small_truth(J=2, T=4), design) == 0.0


class TestGamma:
    def test_scaled_offsets_sum_to_zero(self, rng):
        params = small_truth(T=10, gamma_raw=rng.normal(size=10))
        month_covid = np.array([False] * 5 + [True] * 5)
        gamma = params.gamma(month_covid)
        scales = params.gamma_scales(month_covid)
        assert abs((gamma / scales).sum()) < 1e-12
        # raw sum is nonzero once the window rescales part of the months
        assert abs(gamma.sum()) > 1e-6

    def test_plain_sum_zero_without_window(self, rng):
        params = small_truth(T=10, gamma_raw=rng.normal(size=10))
        gamma = params.gamma(np.zeros(10, dtype=bool))
        assert abs(gamma.sum()) < 1e-12

    def test_doubling_raw_keeps_constraint(self, rng):
        params = small_truth(T=8, gamma_raw=rng.normal(size=8))
        doubled = small_truth(T=8, gamma_raw=2.0 * params.gamma_raw)
        month_covid = np.array([False] * 4 + [True] * 4)
        ratio = doubled.gamma(month_covid) / doubled.gamma_scales(month_covid)
        assert abs(ratio.sum()) < 1e-12


class TestTransforms:
    def test_round_trip_identity(self, rng):
        J, T = 3, 6
        for _ in range(20):
            theta = small_truth(J, T,
                                alpha_raw=rng.normal(size=J),
                                gamma_raw=rng.normal(size=T),
                                sigma_alpha=rng.uniform(0.05, 3.0),
                                sigma_gamma=rng.uniform(0.05, 3.0),
                                shock_factor=1.0 + rng.uniform(0.01, 5.0),
                                phi=rng.uniform(0.1, 80.0)).to_array()
            back = constrain(unconstrain(theta, J, T), J, T)
            assert np.allclose(back, theta, rtol=0, atol=1e-12)

    def test_parameter_vector_layout(self):
        params = small_truth(J=2, T=3)
        arr = params.to_array()
        assert arr.shape == (2 + 3 + 10,)
        rebuilt = ParameterVector.from_array(arr, 2, 3)
        assert np.array_equal(rebuilt.to_array(), arr)
        assert rebuilt.J == 2 and rebuilt.T == 3
        assert len(param_names(2, 3)) == arr.shape[0]

    def test_translation_identifiability(self, rng):
        data = simulate_dataset(small_scenario(records=120))
        params = small_truth(
            J=3, T=12, alpha_raw=rng.normal(size=3), gamma_raw=rng.normal(size=12)
        )
        c = 0.7
        shifted = small_truth(
            J=3, T=12,
            mu_alpha=params.mu_alpha + c,
            alpha_raw=params.alpha_raw - c / params.sigma_alpha,
            gamma_raw=params.gamma_raw,
        )
        a = log_likelihood(params, data.design)
        b = log_likelihood(shifted, data.design)
        assert a == pytest.approx(b, abs=1e-10)


class TestLogPosterior:
    def test_gradient_matches_finite_differences(self, rng):
        data = simulate_dataset(small_scenario(records=100))
        lp = LogPosterior(data.design)
        h = 1e-5
        for _ in range(5):
            u = rng.uniform(-2, 2, lp.dim)
            value, grad = lp(u)
            assert math.isfinite(value)
            for i in rng.choice(lp.dim, size=8, replace=False):
                up, um = u.copy(), u.copy()
                up[i] += h
                um[i] -= h
                fd = (lp(up)[0] - lp(um)[0]) / (2 * h)
                denom = max(1.0, abs(grad[i]), abs(fd))
                assert abs(grad[i] - fd) / denom < 1e-5

    def test_empty_design_value_is_prior_plus_jacobian(self, rng):
        design = design_from_arrays(
            n=[], y=[], raw_counts=np.zeros((0, 4)), cluster_idx=[], month_idx=[],
            J=2, T=4, month0=0,
        )
        lp = LogPosterior(design)
        u = rng.uniform(-1, 1, lp.dim)
        theta = constrain(u, 2, 4)
        params = ParameterVector.from_array(theta, 2, 4)
        jac = u[1] + u[6 + 2 + 4] + u[7 + 2 + 4] + u[9 + 2 + 4]
        value, grad = lp(u)
        assert value == pytest.approx(log_prior(params) + jac, abs=1e-10)
        # prior + Jacobian gradient also matches finite differences
        h = 1e-6
        for i in range(lp.dim):
            up, um = u.copy(), u.copy()
            up[i] += h
            um[i] -= h
            fd = (lp(up)[0] - lp(um)[0]) / (2 * h)
            assert abs(grad[i] - fd) < 1e-6 * max(1.0, abs(grad[i]))

    def test_nonfinite_input_flagged_as_divergence(self):
        data = simulate_dataset(small_scenario(records=30))
        lp = LogPosterior(data.design)
        u = np.zeros(lp.dim)
        u[1] = 800.0  # exp overflow on the cluster scale
        value, grad = lp(u)
        assert value == -math.inf
        assert np.all(grad == 0.0)
        assert lp.counters["nonfinite"] == 1

    def test_derived_block(self):
        data = simulate_dataset(small_scenario(records=30))
        lp = LogPosterior(data.design)
        theta = data.truth.to_array()
        derived = lp.derived(theta)
        assert derived.shape == (3 + 12,)
        assert derived[:3] == pytest.approx(data.truth.alpha())
        assert derived[3:] == pytest.approx(data.truth.gamma(data.design.month_covid))


class TestModelConfig:
    def test_empty_file_reproduces_defaults(self, tmp_path):
        path = tmp_path / "model.cfg"
        path.write_text("# all defaults\n", encoding="utf-8")
        assert ModelConfig.from_file(path) == ModelConfig()

    def test_overrides_and_windows(self, tmp_path):
        path = tmp_path / "model.cfg"
        path.write_text(
            "beta_scale = 0.25\ncovid_start = 2020-03\ncovid_end = 2021-06\nz_scale_predictors = true\n",
            encoding="utf-8",
        )
        config = ModelConfig.from_file(path)
        assert config.beta_scale == 0.25
        assert config.covid_window == ((2020, 3), (2021, 6))
        assert config.z_scale_predictors

    def test_unknown_key_fails(self, tmp_path):
        path = tmp_path / "model.cfg"
        path.write_text("sigma_tau = 1\n", encoding="utf-8")
        with pytest.raises(ConfigurationError, match="sigma_tau"):
            ModelConfig.from_file(path)
