import numpy as np
import pytest

from airdelay.ingest import ObservationRecord
from airdelay.model import ParameterVector
from airdelay.simulate import CountProcess, ScenarioConfig


def make_record(
    year=2024,
    month=1,
    airport="ORD",
    carrier="AA",
    n=100.0,
    y=20.0,
    causes=None,
):
    """Record with a valid cause split (everything on carrier by default)."""
    if causes is None:
        causes = (y, 0.0, 0.0, 0.0, 0.0)
    return ObservationRecord(
        year=year,
        month=month,
        airport=airport,
        carrier=carrier,
        arr_flights=float(n),
        arr_del15=float(y),
        carrier_ct=float(causes[0]),
        weather_ct=float(causes[1]),
        nas_ct=float(causes[2]),
        security_ct=float(causes[3]),
        late_aircraft_ct=float(causes[4]),
    )


def small_truth(J=3, T=12, **overrides):
    base = dict(
        mu_alpha=-1.5,
        sigma_alpha=0.3,
        alpha_raw=np.linspace(1.0, -1.0, J),
        beta=np.array([0.3, 0.8, -0.1, 0.7]),
        gamma_raw=np.zeros(T),
        sigma_gamma=0.235,
        shock_factor=2.24,
        delta_covid=-0.267,
        phi=35.0,
    )
    base.update(overrides)
    return ParameterVector(**base)


def small_scenario(J=3, T=12, records=100, seed=11, **overrides):
    """Low-count scenario whose likelihood is numerically tame."""
    base = dict(
        n_clusters=J,
        n_months=T,
        records_per_month=max(1, records // T),
        total_records=records,
        n_airports=4 * J,
        volume_log_means=tuple(np.linspace(3.5, 2.5, J)),
        volume_log_sd=0.3,
        counts=CountProcess(
            weather=(1.0, 0.8), nas=(3.0, 1.5), security=(0.4, 0.5), late=(3.0, 1.5)
        ),
        covid_start=(2010, 7),
        covid_end=(2010, 12),
        true_params=small_truth(J, T),
        auto_gamma=True,
        seed=seed,
    )
    base.update(overrides)
    return ScenarioConfig(**base)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
