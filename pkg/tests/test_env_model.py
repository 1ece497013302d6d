"""Environment-state laws, transforms, sampling, and quenched moments."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate
from scipy.stats import chisquare, norm

from brwlab import (
    ConfigurationError,
    ConstantEnvironment,
    Deterministic,
    EnvRealization,
    EnvState,
    Gaussian,
    IIDEnvironment,
    MarkovEnvironment,
    PointMass,
    PoissonPositive,
    ShiftedGeometric,
    TwoPoint,
    laplace_m,
    laplace_m_prime,
    quenched_moments,
    sample_environment,
    sample_point_process,
)
from brwlab.env_model import stream


def state(offspring, displacement):
    return EnvState(offspring, displacement)


class TestLaplace:
    def test_point_mass_at_zero(self):
        s = state(Deterministic(2), PointMass(0.0))
        assert laplace_m(s, 3.7) == 2.0

    def test_gaussian_closed_form_vs_quadrature(self):
        s = state(Deterministic(2), Gaussian(0.0, 1.0))
        got = laplace_m(s, 1.0)
        assert got == pytest.approx(2.0 * math.exp(0.5), rel=1e-12)
        # independent oracle: numeric integration of 2 e^{tx} phi(x)
        oracle, _ = integrate.quad(lambda x: 2.0 * math.exp(1.0 * x) * norm.pdf(x), -12, 12)
        assert got == pytest.approx(oracle, rel=1e-9)

    def test_two_point_at_zero(self):
        s = state(Deterministic(3), TwoPoint(1.0, 0.5))
        assert laplace_m(s, 0.0) == pytest.approx(3.0, rel=1e-15)

    def test_prime_point_mass_zero(self):
        s = state(Deterministic(2), PointMass(0.0))
        for t in (-3.0, 0.0, 2.5):
            assert laplace_m_prime(s, t) == 0.0

    def test_prime_gaussian(self):
        s = state(Deterministic(2), Gaussian(0.0, 1.0))
        assert laplace_m_prime(s, 1.0) == pytest.approx(2.0 * math.exp(0.5), rel=1e-12)

    def test_prime_two_point_symmetric(self):
        s = state(Deterministic(2), TwoPoint(1.0, 0.5))
        assert laplace_m_prime(s, 0.0) == pytest.approx(0.0, abs=1e-15)

    @pytest.mark.parametrize(
        "disp",
        [PointMass(0.7), Gaussian(0.3, 2.0), TwoPoint(1.5, 0.25), TwoPoint(1.0, 1.0)],
    )
    def test_prime_matches_central_difference(self, disp):
        s = state(ShiftedGeometric(0.4), disp)
        h = 1e-5
        for t in np.linspace(-4.0, 4.0, 17):
            fd = (laplace_m(s, t + h) - laplace_m(s, t - h)) / (2 * h)
            assert laplace_m_prime(s, t) == pytest.approx(fd, rel=1e-6)

    @pytest.mark.parametrize(
        "disp",
        [PointMass(-1.2), Gaussian(0.5, 0.7), TwoPoint(2.0, 0.8)],
    )
    def test_log_laplace_convex_and_positive(self, disp):
        s = state(PoissonPositive(1.3), disp)
        grid = np.linspace(-6.0, 6.0, 101)
        vals = np.array([laplace_m(s, t) for t in grid])
        assert (vals > 0).all()
        logs = np.array([s.log_m(t) for t in grid])
        d2 = logs[2:] - 2 * logs[1:-1] + logs[:-2]
        assert (d2 >= -1e-9).all()

    @given(
        t=st.floats(-5, 5),
        mean=st.floats(-2, 2),
        var=st.floats(0.1, 4),
        k=st.integers(1, 9),
    )
    @settings(max_examples=60, deadline=None)
    def test_gaussian_laplace_identity(self, t, mean, var, k):
        s = state(Deterministic(k), Gaussian(mean, var))
        assert laplace_m(s, t) == pytest.approx(
            k * math.exp(mean * t + 0.5 * var * t * t), rel=1e-12
        )


class TestOffspringLaws:
    def test_means(self):
        assert Deterministic(4).mean == 4.0
        assert ShiftedGeometric(0.5).mean == 2.0
        lam = 1.7
        assert PoissonPositive(lam).mean == pytest.approx(lam / (1 - math.exp(-lam)))

    def test_all_supported_laws_positive(self):
        rng = stream(123, 9)
        for law in (Deterministic(1), ShiftedGeometric(0.05), PoissonPositive(0.2)):
            draws = law.sample(rng, 20_000)
            assert draws.min() >= 1

    def test_invalid_parameters_rejected(self):
        with pytest.raises(ConfigurationError):
            Deterministic(0)
        with pytest.raises(ConfigurationError):
            ShiftedGeometric(0.0)
        with pytest.raises(ConfigurationError):
            Gaussian(0.0, 0.0)
        with pytest.raises(ConfigurationError):
            TwoPoint(-1.0, 0.5)


class TestPointProcess:
    def test_deterministic_point_mass(self):
        n, offsets = sample_point_process(state(Deterministic(2), PointMass(0.0)), stream(1, 0))
        assert n == 2 and list(offsets) == [0.0, 0.0]

    def test_two_point_sure_up(self):
        n, offsets = sample_point_process(state(Deterministic(3), TwoPoint(1.0, 1.0)), stream(1, 1))
        assert n == 3 and list(offsets) == [1.0, 1.0, 1.0]

    def test_shifted_geometric_mean(self):
        rng = stream(7, 2)
        draws = ShiftedGeometric(0.5).sample(rng, 1_000_000)
        assert abs(draws.mean() - 2.0) < 0.01

    @pytest.mark.parametrize("t", [-1.0, 0.0, 1.0])
    def test_monte_carlo_matches_laplace(self, t):
        s = state(ShiftedGeometric(0.5), Gaussian(0.2, 1.0))
        rng = stream(11, 3)
        n_samples = 100_000
        counts = s.offspring.sample(rng, n_samples)
        offsets = s.displacement.sample(rng, int(counts.sum()))
        bounds = np.concatenate([[0], np.cumsum(counts)])
        vals = np.exp(t * offsets)
        sums = np.add.reduceat(vals, bounds[:-1])
        mean = sums.mean()
        se = sums.std(ddof=1) / math.sqrt(n_samples)
        assert abs(mean - laplace_m(s, t)) < 4 * se


class TestEnvironmentModels:
    def test_constant_sampling(self):
        s = state(Deterministic(2), PointMass(0.0))
        model = ConstantEnvironment(s)
        real = sample_environment(model, 5, seed=1)
        assert len(real) == 5 and all(st_ is s for st_ in real.states)

    def test_iid_frequency_concentration(self):
        a = state(Deterministic(2), Gaussian(1.0, 1.0))
        b = state(Deterministic(3), Gaussian(-1.0, 2.0))
        model = IIDEnvironment((a, b), (0.5, 0.5))
        real = sample_environment(model, 1_000_000, seed=7)
        freq_a = sum(1 for s in real.states if s is a) / 1e6
        # binomial: sd = 0.0005, so [0.498, 0.502] is a 4-sigma band
        assert 0.498 <= freq_a <= 0.502

    def test_markov_stationary_frequency(self):
        a = state(Deterministic(2), Gaussian(1.0, 1.0))
        b = state(Deterministic(3), Gaussian(-1.0, 2.0))
        model = MarkovEnvironment((a, b), ((0.9, 0.1), (0.1, 0.9)))
        # hand-solved stationary vector of the symmetric two-state chain
        assert np.allclose(model.marginal(), [0.5, 0.5], atol=1e-12)
        real = sample_environment(model, 1_000_000, seed=3)
        freq_a = sum(1 for s in real.states if s is a) / 1e6
        assert abs(freq_a - 0.5) < 0.01

    @pytest.mark.parametrize("k", [0, 50])
    def test_marginal_stationarity_chi_square(self, cfg_markov, k):
        counts = np.zeros(2)
        for i in range(2_000):
            real = sample_environment(cfg_markov, k + 1, seed=50_000 + i)
            counts[cfg_markov.states.index(real.states[k])] += 1
        expected = cfg_markov.marginal() * counts.sum()
        _, p_value = chisquare(counts, expected)
        assert p_value > 0.001

    def test_probs_must_sum_to_one(self):
        a = state(Deterministic(2), PointMass(0.0))
        with pytest.raises(ConfigurationError):
            IIDEnvironment((a, a), (0.6, 0.5))

    def test_reducible_markov_rejected(self):
        a = state(Deterministic(2), PointMass(0.0))
        b = state(Deterministic(3), PointMass(0.0))
        with pytest.raises(ConfigurationError, match="irreducible"):
            MarkovEnvironment((a, b), ((1.0, 0.0), (0.0, 1.0)))

    def test_subcritical_rejected(self):
        s = state(Deterministic(1), Gaussian(0.0, 1.0))
        with pytest.raises(ConfigurationError, match="supercritical"):
            ConstantEnvironment(s)

    def test_replayable(self, cfg_2s):
        r1 = sample_environment(cfg_2s, 200, seed=5)
        r2 = sample_environment(cfg_2s, 200, seed=5)
        assert all(a is b for a, b in zip(r1.states, r2.states))
        assert r1.master_seed == 5


class TestQuenchedMoments:
    def test_constant_gaussian(self, cfg_g):
        real = sample_environment(cfg_g, 4, seed=1)
        mom = quenched_moments(real, (0.0, 1.0))
        assert mom.a[4] == 0.0
        assert mom.b[4] == 2.0
        assert mom.log_p[4] == pytest.approx(4 * math.log(2), abs=1e-15)

    def test_degenerate_scale_flagged(self, cfg_det):
        real = sample_environment(cfg_det, 5, seed=1)
        mom = quenched_moments(real, (0.0,))
        assert mom.degenerate_scale(5)
        assert mom.lattice

    def test_two_state_path(self):
        a = state(Deterministic(2), Gaussian(1.0, 1.0))
        b = state(Deterministic(3), Gaussian(-1.0, 2.0))
        mom = quenched_moments(EnvRealization((a, b)), (0.0,))
        assert mom.a[2] == 0.0
        assert mom.b[2] == pytest.approx(math.sqrt(3.0), rel=1e-15)
        assert mom.log_p[2] == pytest.approx(math.log(6.0), rel=1e-15)

    def test_cumulative_grid_matches_sum(self, cfg_2s):
        real = sample_environment(cfg_2s, 12, seed=9)
        t_grid = (-1.0, 0.5, 2.0)
        mom = quenched_moments(real, t_grid)
        direct = np.zeros(len(t_grid))
        for i, s in enumerate(real.states):
            direct += np.array([s.log_m(t) for t in t_grid])
            assert np.allclose(mom.cum_log_m_t[i + 1], direct, rtol=1e-13, atol=1e-13)
