import math

import numpy as np
import pytest

from airdelay.sampler import (
    SamplerConfig,
    SamplerError,
    State,
    adapt,
    find_reasonable_step_size,
    leapfrog,
    nuts_draw,
    run_chains,
)


def std_normal(q):
    return -0.5 * float(q @ q), -q


def make_rng(seed=0):
    return np.random.Generator(np.random.Philox(seed))


class TestLeapfrog:
    def test_energy_conservation_harmonic_oscillator(self):
        q, p = np.array([1.0]), np.array([0.0])
        mass = np.ones(1)
        h0 = 0.5 * (q @ q + p @ p)
        for _ in range(1000):
            q, p, energy = leapfrog(q, p, 0.01, mass, std_normal)
        h1 = 0.5 * (q @ q + p @ p)
        assert abs(h1 - h0) < 1e-3
        assert energy == pytest.approx(h1, abs=1e-12)

    def test_reversibility(self, rng):
        q = rng.normal(size=4)
        p = rng.normal(size=4)
        mass = rng.uniform(0.5, 2.0, size=4)
        qf, pf = q.copy(), p.copy()
        for _ in range(25):
            qf, pf, _ = leapfrog(qf, pf, 0.05, mass, std_normal)
        qb, pb = qf, -pf
        for _ in range(25):
            qb, pb, _ = leapfrog(qb, pb, 0.05, mass, std_normal)
        assert np.allclose(qb, q, atol=1e-10)
        assert np.allclose(-pb, p, atol=1e-10)

    def test_zero_step_is_identity(self, rng):
        q = rng.normal(size=3)
        p = rng.normal(size=3)
        q2, p2, _ = leapfrog(q, p, 0.0, np.ones(3), std_normal)
        assert np.array_equal(q2, q) and np.array_equal(p2, p)

    def test_divergence_signalled_as_infinite_energy(self):
        def cliff(q):
            if abs(q[0]) > 1.0:
                return -math.inf, np.zeros(1)
            return 0.0, np.zeros(1)

        _, _, energy = leapfrog(np.array([0.9]), np.array([1.0]), 0.5, np.ones(1), cliff)
        assert energy == math.inf

    def test_rejects_nonpositive_mass(self):
        with pytest.raises(ValueError):
            leapfrog(np.zeros(1), np.zeros(1), 0.1, np.zeros(1), std_normal)


class TestNutsDraw:
    def test_standard_normal_moments(self):
        rng = make_rng(7)
        state = State.at(std_normal, np.array([0.0]))
        draws = np.empty(4000)
        for i in range(4000):
            state, _ = nuts_draw(state, 0.9, np.ones(1), std_normal, rng)
            draws[i] = state.q[0]
        assert abs(draws.mean()) < 0.05
        assert 0.9 < draws.var() < 1.1

    def test_degenerate_target_never_moves(self):
        start = np.array([0.25, -0.5])

        def spike(q):
            if np.array_equal(q, start):
                return 0.0, np.zeros(2)
            return -math.inf, np.zeros(2)

        rng = make_rng(3)
        state = State.at(spike, start)
        divergent = 0
        for _ in range(100):
            state, stats = nuts_draw(state, 0.3, np.ones(2), spike, rng)
            divergent += stats.divergent
            assert np.array_equal(state.q, start)
        assert divergent == 100

    def test_depth_saturation_flagged(self):
        # near-flat target: the trajectory never U-turns at depth 2
        def flat(q):
            return -0.5e-8 * float(q @ q), -1e-8 * q

        rng = make_rng(5)
        state = State.at(flat, np.zeros(1))
        _, stats = nuts_draw(state, 0.01, np.ones(1), flat, rng, max_tree_depth=2)
        assert stats.depth_saturated
        assert stats.tree_depth == 2


class TestAdapt:
    def test_mass_matches_target_variance(self):
        def wide(q):
            return -0.5 * float(q @ q) / 100.0, -q / 100.0

        result = adapt(wide, np.array([1.0]), SamplerConfig(warmup=800, draws=1, seed=0), make_rng(1))
        assert 50.0 < result.mass_diag[0] < 200.0

    def test_realized_acceptance_near_target(self):
        outs = run_chains(std_normal, 1, SamplerConfig(chains=1, warmup=1000, draws=1500, seed=21))
        assert 0.7 <= outs[0].accept_stat.mean() <= 0.9

    def test_bitwise_deterministic(self):
        a = adapt(std_normal, np.array([0.3]), SamplerConfig(warmup=300, draws=1, seed=0), make_rng(9))
        b = adapt(std_normal, np.array([0.3]), SamplerConfig(warmup=300, draws=1, seed=0), make_rng(9))
        assert a.step_size == b.step_size
        assert np.array_equal(a.mass_diag, b.mass_diag)
        assert np.array_equal(a.state.q, b.state.q)

    def test_short_warmup_rejected(self):
        with pytest.raises(SamplerError, match="warmup"):
            adapt(std_normal, np.zeros(1), SamplerConfig(warmup=100, draws=1, seed=0), make_rng(0))

    def test_nonfinite_start_rejected(self):
        def bad(q):
            return -math.inf, np.zeros(1)

        with pytest.raises(SamplerError):
            adapt(bad, np.zeros(1), SamplerConfig(warmup=200, draws=1, seed=0), make_rng(0))


class TestRunChains:
    def test_total_retained_draws(self):
        config = SamplerConfig(chains=4, warmup=200, draws=50, seed=4)
        outs = run_chains(std_normal, 2, config)
        assert sum(o.unconstrained.shape[0] for o in outs) == 200
        assert [o.chain_id for o in outs] == [0, 1, 2, 3]

    def test_same_seed_identical(self):
        config = SamplerConfig(chains=2, warmup=200, draws=100, seed=123)
        a = run_chains(std_normal, 2, config)
        b = run_chains(std_normal, 2, config)
        for x, y in zip(a, b):
            assert np.array_equal(x.unconstrained, y.unconstrained)
            assert x.step_size == y.step_size

    def test_distinct_seeds_differ(self):
        a = run_chains(std_normal, 1, SamplerConfig(chains=1, warmup=200, draws=50, seed=1))
        b = run_chains(std_normal, 1, SamplerConfig(chains=1, warmup=200, draws=50, seed=2))
        assert not np.array_equal(a[0].unconstrained, b[0].unconstrained)

    def test_chains_have_independent_streams(self):
        outs = run_chains(std_normal, 1, SamplerConfig(chains=2, warmup=200, draws=100, seed=5))
        assert not np.array_equal(outs[0].unconstrained, outs[1].unconstrained)

    def test_correlated_gaussian_covariance(self):
        cov = np.array([[1.0, 0.9], [0.9, 1.0]])
        prec = np.linalg.inv(cov)

        def target(q):
            return -0.5 * float(q @ prec @ q), -prec @ q

        outs = run_chains(target, 2, SamplerConfig(chains=2, warmup=500, draws=2000, seed=8))
        draws = np.vstack([o.unconstrained for o in outs])
        sample_cov = np.cov(draws.T)
        assert np.linalg.norm(sample_cov - cov) <= 0.1 * np.linalg.norm(cov)
        assert sum(o.divergence_count for o in outs) == 0

    def test_constrained_view_applied(self):
        outs = run_chains(
            std_normal,
            1,
            SamplerConfig(chains=1, warmup=200, draws=20, seed=6),
            constrain=lambda q: np.exp(q),
            names=["scale"],
        )
        assert np.allclose(outs[0].constrained, np.exp(outs[0].unconstrained))
        assert outs[0].names == ["scale"]

    def test_aborting_chain_reports_partial_status(self):
        # finite plateau so narrow that warmup cannot ever accept a move
        def needle(q):
            if abs(q[0]) < 1e-12:
                return 0.0, np.zeros(1)
            return -math.inf, np.zeros(1)

        outs = run_chains(needle, 1, SamplerConfig(chains=2, warmup=200, draws=10, seed=7, jitter=0.0))
        assert all(o.status.startswith("aborted") for o in outs)
        assert all(o.unconstrained.shape[0] == 0 for o in outs)
