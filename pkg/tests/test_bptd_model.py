"""
Test suite for the BPTD generative model
"""
import numpy as np
import pytest
from scipy.stats import poisson

from src.core.errors import DataError, ParameterError
from src.models.params import BPTDState, Hyperparams, ModelDims, TuckerFactors
from src.models.tensors import CountTensor
from src.services.bptd_model import (
    community_networks,
    core_sum_draws,
    effective_dims,
    entry_rates,
    expected_core_sum,
    expected_core_sum_limit,
    log_likelihood,
    planted_state,
    poisson_rate,
    rates_dense,
    role_rates,
    sample_prior,
    simulate,
    total_rate,
)
from src.services.distributions import RngStream


class TestSamplePrior:
    """Draws from the hierarchical priors"""

    def test_shapes_and_positivity(self, tiny_state, tiny_dims):
        assert tiny_state.theta.shape == (4, 2)
        assert tiny_state.phi.shape == (3, 2)
        assert tiny_state.psi.shape == (3, 2)
        assert tiny_state.core.shape == tiny_dims.core_shape
        tiny_state.validate()

    def test_fixed_scalars_are_kept(self, tiny_dims, rng):
        state = sample_prior(tiny_dims, Hyperparams(eps0=1.0, fixed_delta=2.5, fixed_zeta=0.5), rng)
        assert state.delta == 2.5
        assert state.zeta == 0.5

    def test_same_seed_same_state(self, tiny_dims, flat_hyper):
        a = sample_prior(tiny_dims, flat_hyper, RngStream(3))
        b = sample_prior(tiny_dims, flat_hyper, RngStream(3))
        for name in BPTDState.ARRAY_ORDER:
            assert np.array_equal(getattr(a, name), getattr(b, name))

    def test_array_round_trip(self, tiny_state):
        restored = BPTDState.from_arrays(tiny_state.to_arrays())
        assert np.array_equal(restored.core, tiny_state.core)
        assert restored.delta == tiny_state.delta
        assert restored.hyper == tiny_state.hyper

    def test_core_shape_structure(self, tiny_state):
        shape = tiny_state.core_shape()
        s = tiny_state
        assert shape[0, 0, 1, 1] == pytest.approx(s.eta_within[0] * s.eta_between[0] * s.nu[1] * s.rho[1])
        assert shape[0, 1, 0, 1] == pytest.approx(s.eta_between[0] * s.eta_between[1] * s.nu[0] * s.rho[1])


class TestRates:
    """Cell rates and rate sums"""

    def test_poisson_rate_matches_brute_force(self, tiny_state):
        s = tiny_state
        i, j, a, t = 0, 2, 1, 2
        brute = sum(
            s.theta[i, c] * s.theta[j, d] * s.phi[a, k] * s.psi[t, r] * s.core[c, d, k, r]
            for c in range(2) for d in range(2) for k in range(2) for r in range(2)
        )
        assert poisson_rate(s, i, j, a, t) == pytest.approx(brute, rel=1e-12)

    def test_invalid_cells(self, tiny_state):
        with pytest.raises(DataError):
            poisson_rate(tiny_state, 1, 1, 0, 0)
        with pytest.raises(DataError):
            poisson_rate(tiny_state, 0, 4, 0, 0)

    def test_entry_rates_match_scalar_rates(self, tiny_state):
        subs = np.array([[0, 1, 0, 0], [3, 2, 2, 1], [1, 0, 1, 2]])
        expected = [poisson_rate(tiny_state, *row) for row in subs]
        assert np.allclose(entry_rates(tiny_state, subs, chunk_elements=8), expected, rtol=1e-12)

    def test_dense_rates_zero_on_self_pairs(self, tiny_state):
        dense = rates_dense(tiny_state)
        for i in range(4):
            assert np.all(dense[i, i] == 0)
        assert dense[0, 1, 2, 1] == pytest.approx(poisson_rate(tiny_state, 0, 1, 2, 1), rel=1e-12)

    def test_total_rate_identity(self, tiny_state):
        assert total_rate(tiny_state) == pytest.approx(rates_dense(tiny_state).sum(), rel=1e-10)
        assert total_rate(tiny_state, time_steps=[2]) == pytest.approx(
            rates_dense(tiny_state)[..., 2].sum(), rel=1e-10,
        )

    def test_total_rate_with_dyad_mask(self, tiny_state):
        w = np.zeros((4, 4))
        w[0, 1] = w[2, 3] = 1.0
        dense = rates_dense(tiny_state)
        assert total_rate(tiny_state, w) == pytest.approx(dense[0, 1].sum() + dense[2, 3].sum(), rel=1e-10)


class TestExpectedCoreSum:
    """Prior mean of the summed core"""

    def test_closed_form_values(self):
        assert expected_core_sum(1.0, 1.0, 1.0, 1) == pytest.approx(1.0)
        assert expected_core_sum(1.0, 1.0, 1.0, 2) == pytest.approx(1.5)
        assert expected_core_sum(2.0, 1.0, 2.0, 4) == pytest.approx((8.0 + 0.75 * 16.0) / 2.0)

    def test_limit_is_two_at_unit_values(self):
        assert expected_core_sum_limit(1.0, 1.0, 1.0) == 2.0

    def test_approaches_limit(self):
        assert expected_core_sum(1.0, 1.0, 1.0, 10_000) == pytest.approx(2.0, abs=1e-3)

    def test_accepts_model_dims(self, tiny_dims):
        assert expected_core_sum(1.0, 1.0, 1.0, tiny_dims) == pytest.approx(1.5)

    def test_invalid(self):
        with pytest.raises(ParameterError):
            expected_core_sum(0.0, 1.0, 1.0, 3)
        with pytest.raises(ParameterError):
            expected_core_sum_limit(1.0, -1.0, 1.0)

    @pytest.mark.parametrize("n_comm", [2, 10, 50])
    def test_monte_carlo_mean(self, n_comm):
        dims = ModelDims(n_countries=2, n_actions=1, n_steps=1, n_communities=n_comm, n_topics=3, n_regimes=2)
        hyper = Hyperparams(eps0=1.0, gamma0=1.0, fixed_delta=1.0, fixed_zeta=1.0)
        draws = core_sum_draws(dims, hyper, 100_000, RngStream(n_comm))
        expected = expected_core_sum(1.0, 1.0, 1.0, n_comm)
        mcse = draws.std(ddof=1) / np.sqrt(draws.size)
        assert abs(draws.mean() - expected) < max(0.02 * expected, 4 * mcse)

    def test_draws_need_fixed_scalars(self, tiny_dims, rng):
        with pytest.raises(ParameterError):
            core_sum_draws(tiny_dims, Hyperparams(), 10, rng)


class TestSimulate:
    """Forward sampling of count tensors"""

    def test_no_self_loops(self, tiny_state, rng):
        tensor = simulate(tiny_state, None, rng)
        assert np.all(tensor.subs[:, 0] != tensor.subs[:, 1])
        assert tensor.dims == (4, 4, 3, 3)

    def test_mean_total_matches_total_rate(self, tiny_dims, rng):
        state = planted_state(tiny_dims, rng, n_active_communities=2, n_active_topics=2, total_events=40.0)
        totals = np.array([simulate(state, None, rng).total for _ in range(400)])
        expected = total_rate(state)
        assert abs(totals.mean() - expected) < 5 * np.sqrt(expected / totals.size)

    def test_zero_factors_give_empty_tensor(self, rng):
        zeros = TuckerFactors(
            theta=np.zeros((3, 1)), phi=np.ones((2, 1)), psi=np.ones((2, 1)), core=np.ones((1, 1, 1, 1)),
        )
        assert simulate(zeros, None, rng).nnz == 0

    def test_dims_mismatch(self, tiny_state, rng):
        wrong = ModelDims(n_countries=5, n_actions=3, n_steps=3, n_communities=2, n_topics=2, n_regimes=2)
        with pytest.raises(DataError):
            simulate(tiny_state, wrong, rng)


class TestSummaries:
    def test_effective_dims(self, tiny_state):
        state = tiny_state.copy()
        state.eta_between = np.array([1.0, 0.01])
        state.nu = np.array([1.0, 1.0])
        state.rho = np.array([1.0, 0.04])
        assert effective_dims(state, 0.05) == (1, 2, 1)
        with pytest.raises(ParameterError):
            effective_dims(state, 1.5)

    def test_log_likelihood_matches_cellwise_sum(self, tiny_state, tiny_tensor):
        dense_rates = rates_dense(tiny_state)
        dense_counts = tiny_tensor.to_dense()
        off = ~np.eye(4, dtype=bool)
        expected = poisson.logpmf(dense_counts[off], dense_rates[off]).sum()
        assert log_likelihood(tiny_state, tiny_tensor) == pytest.approx(expected, rel=1e-10)

    def test_log_likelihood_of_empty_tensor(self, tiny_state):
        empty = CountTensor.empty((4, 4, 3, 3))
        assert log_likelihood(tiny_state, empty) == pytest.approx(-total_rate(tiny_state))

    def test_community_networks(self, tiny_state):
        nets = community_networks(tiny_state, 1)
        assert nets.shape == (2, 2, 2)
        assert nets[1, 0, 1] == tiny_state.core[0, 1, 1, 1]
        with pytest.raises(DataError):
            community_networks(tiny_state, 2)

    def test_role_rates_match_brute_force(self, tiny_state):
        s = tiny_state
        send, recv = role_rates(s, topic=1, regime=0)
        lam = s.core[:, :, 1, 0]
        i, c = 2, 1
        brute_send = sum(s.theta[i, c] * s.theta[j, d] * lam[c, d] for j in range(4) if j != i for d in range(2))
        brute_recv = sum(s.theta[h, e] * s.theta[i, c] * lam[e, c] for h in range(4) if h != i for e in range(2))
        assert send[i, c] == pytest.approx(brute_send, rel=1e-12)
        assert recv[i, c] == pytest.approx(brute_recv, rel=1e-12)

    def test_planted_state(self, rng):
        dims = ModelDims(n_countries=30, n_actions=6, n_steps=8, n_communities=10, n_topics=6, n_regimes=3)
        state = planted_state(dims, rng, total_events=50_000.0)
        assert total_rate(state) == pytest.approx(50_000.0, rel=1e-10)
        assert np.array_equal(state.theta.argmax(axis=1), np.arange(30) % 3)
        assert effective_dims(state) == (3, 2, 1)
