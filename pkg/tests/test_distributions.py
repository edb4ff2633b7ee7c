"""
Test suite for the random variate generators
"""
import numpy as np
import pytest
from scipy import stats

from src.core.errors import NumericalError, ParameterError
from src.services.distributions import (
    GAMMA_FLOOR,
    RngStream,
    sample_categorical,
    sample_categorical_rows,
    sample_crt,
    sample_crt_array,
    sample_gamma,
    sample_poisson,
)


class TestRngStream:
    """Seeding and substreams"""

    def test_same_seed_same_sequence(self):
        a, b = RngStream(7), RngStream(7)
        assert np.array_equal(a.uniform(10), b.uniform(10))

    def test_substreams_differ(self):
        root = RngStream(7)
        assert not np.array_equal(root.substream(0).uniform(10), root.substream(1).uniform(10))
        assert np.array_equal(root.substream(3).uniform(5), RngStream(7, (3,)).uniform(5))

    def test_fork_is_reproducible(self):
        first = [s.uniform(3) for s in RngStream(11).fork(3)]
        second = [s.uniform(3) for s in RngStream(11).fork(3)]
        for x, y in zip(first, second):
            assert np.array_equal(x, y)
        assert not np.array_equal(first[0], first[1])

    def test_negative_seed_rejected(self):
        with pytest.raises(ParameterError):
            RngStream(-1)


class TestGamma:
    """Gamma(shape, rate) draws"""

    def test_mean_matches_shape_over_rate(self, rng):
        draws = sample_gamma(2.0, 4.0, rng, size=200_000)
        se = np.sqrt(2.0 / 16.0 / draws.size)
        assert abs(draws.mean() - 0.5) < 5 * se

    def test_tiny_shape_stays_positive(self, rng):
        draws = sample_gamma(0.001, 1.0, rng, size=10_000)
        assert np.all(draws >= GAMMA_FLOOR)

    def test_scalar_returns_float(self, rng):
        assert isinstance(sample_gamma(1.0, 1.0, rng), float)

    def test_broadcasts_arrays(self, rng):
        out = sample_gamma(np.ones((3, 1)), np.ones(4), rng)
        assert out.shape == (3, 4)

    @pytest.mark.parametrize("shape,rate", [(0.0, 1.0), (1.0, -1.0), (np.inf, 1.0), (np.nan, 1.0)])
    def test_invalid_parameters(self, rng, shape, rate):
        with pytest.raises(ParameterError):
            sample_gamma(shape, rate, rng)


class TestPoisson:
    def test_zero_rate_gives_zero(self, rng):
        assert sample_poisson(0.0, rng) == 0
        assert np.all(sample_poisson(np.zeros(5), rng) == 0)

    def test_negative_rate_rejected(self, rng):
        with pytest.raises(ParameterError):
            sample_poisson(-0.5, rng)


class TestCategorical:
    """Categorical draws with normalization guards"""

    def test_point_mass(self, rng):
        assert all(sample_categorical([0.0, 1.0, 0.0], rng) == 1 for _ in range(50))

    def test_frequencies_match_weights(self, rng):
        weights = np.array([1.0, 2.0, 3.0, 4.0])
        draws = sample_categorical_rows(np.tile(weights, (40_000, 1)), rng)
        observed = np.bincount(draws, minlength=4)
        expected = weights / weights.sum() * draws.size
        assert stats.chisquare(observed, expected).pvalue > 0.001

    def test_all_zero_weights_raise(self, rng):
        with pytest.raises(NumericalError):
            sample_categorical([0.0, 0.0], rng)

    def test_negative_weight_rejected(self, rng):
        with pytest.raises(ParameterError):
            sample_categorical([1.0, -1.0], rng)

    @pytest.mark.parametrize("scale", [1e308, 1e-310])
    def test_extreme_weights_are_rescaled(self, rng, scale):
        draws = sample_categorical_rows(np.full((2000, 2), scale), rng)
        assert set(np.unique(draws)) == {0, 1}


class TestCRT:
    """Chinese restaurant table counts"""

    def test_zero_customers(self, rng):
        assert sample_crt(0, 2.0, rng) == 0

    def test_one_customer_opens_one_table(self, rng):
        assert all(sample_crt(1, 0.3, rng) == 1 for _ in range(20))

    def test_bounds(self, rng):
        tables = sample_crt_array(np.full(1000, 25), 0.7, rng)
        assert tables.min() >= 1
        assert tables.max() <= 25

    def test_mean_matches_closed_form(self, rng):
        m, a = 10, 2.0
        p = a / (a + np.arange(m))
        tables = sample_crt_array(np.full(20_000, m), a, rng)
        se = np.sqrt((p * (1 - p)).sum() / tables.size)
        assert abs(tables.mean() - p.sum()) < 5 * se

    def test_elementwise_concentrations(self, rng):
        out = sample_crt_array(np.array([[0, 1], [3, 0]]), np.array([[1.0, 2.0], [0.5, 4.0]]), rng)
        assert out.shape == (2, 2)
        assert out[0, 0] == 0 and out[0, 1] == 1 and out[1, 1] == 0

    @pytest.mark.parametrize("count,conc", [(-1, 1.0), (2, 0.0), (1.5, 1.0)])
    def test_invalid_inputs(self, rng, count, conc):
        with pytest.raises(ParameterError):
            sample_crt_array(np.array([count]), conc, rng)
