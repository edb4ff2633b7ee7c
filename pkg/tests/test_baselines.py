"""
Test suite for the comparison models (BPTF, GPIRM, DCGPIRM)
"""
import numpy as np
import pytest

from src.models.params import Hyperparams, ModelDims
from src.services.baselines import (
    GPIRMState,
    bptf_allocate,
    bptf_entry_rates,
    bptf_from_tucker,
    bptf_prior,
    bptf_q_for_parity,
    bptf_sweep,
    bptf_total_rate,
    gpirm_entry_rates,
    gpirm_prior,
    gpirm_sweep,
    gpirm_time_sweep,
)
from src.services.bptd_model import entry_rates, total_rate
from src.services.distributions import RngStream


def off_diagonal_cells(v: int, a: int, t: int) -> np.ndarray:
    cells = np.indices((v, v, a, t)).reshape(4, -1).T
    return cells[cells[:, 0] != cells[:, 1]]


class TestParity:
    @pytest.mark.parametrize("dims,expected", [
        ((249, 20, 12, 20, 6, 3), 24),
        ((1, 1, 1, 1, 1, 1), 1),
        ((10, 5, 4, 2, 2, 2), 2),
    ])
    def test_class_count(self, dims, expected):
        assert bptf_q_for_parity(*dims) == expected


class TestBPTF:
    """CP baseline"""

    def test_cp_expansion_reproduces_tucker_rates(self, tiny_state):
        cp = bptf_from_tucker(tiny_state)
        assert cp.n_classes == 16
        cells = off_diagonal_cells(4, 3, 3)
        assert np.allclose(entry_rates(tiny_state, cells), bptf_entry_rates(cp, cells), rtol=1e-10)
        assert bptf_total_rate(cp) == pytest.approx(total_rate(tiny_state), rel=1e-10)

    def test_single_class_takes_every_token(self, tiny_tensor, flat_hyper, rng):
        state = bptf_prior(4, 3, 3, 1, flat_hyper, rng)
        sources = bptf_allocate(state, tiny_tensor.tokens(), rng)
        assert sources.classes.tolist() == [tiny_tensor.total]
        assert sources.send.sum() == sources.topic.sum() == tiny_tensor.total

    def test_allocation_preserves_counts(self, tiny_tensor, flat_hyper, rng):
        state = bptf_prior(4, 3, 3, 5, flat_hyper, rng)
        sources = bptf_allocate(state, tiny_tensor.tokens(), rng)
        assert sources.classes.sum() == tiny_tensor.total
        assert np.array_equal(sources.send.sum(axis=1), tiny_tensor.sender_totals())

    def test_sweep_is_deterministic_and_positive(self, tiny_tensor, flat_hyper):
        state = bptf_prior(4, 3, 3, 4, flat_hyper, RngStream(2))
        a = bptf_sweep(state, tiny_tensor, RngStream(8))
        b = bptf_sweep(state, tiny_tensor, RngStream(8))
        assert np.array_equal(a.lambda_q, b.lambda_q)
        assert np.array_equal(a.theta_send, b.theta_send)
        assert np.all(a.psi > 0)

    def test_sweep_leaves_input(self, tiny_tensor, flat_hyper, rng):
        state = bptf_prior(4, 3, 3, 4, flat_hyper, rng)
        before = state.lambda_q.copy()
        bptf_sweep(state, tiny_tensor, rng)
        assert np.array_equal(state.lambda_q, before)

    def test_fixed_zeta(self, tiny_tensor, rng):
        state = bptf_prior(4, 3, 3, 3, Hyperparams(eps0=1.0, fixed_zeta=2.0), rng)
        for _ in range(3):
            state = bptf_sweep(state, tiny_tensor, rng)
        assert state.zeta == 2.0


class TestGPIRM:
    """Single-membership baselines and their one-hot embedding"""

    def test_embedding_identity(self, tiny_dims):
        cells = off_diagonal_cells(4, 3, 3)
        worst = 0.0
        for seed in range(1_000):
            state = gpirm_prior(tiny_dims, Hyperparams(eps0=1.0), RngStream(seed), degree_corrected=seed % 2 == 1)
            direct = gpirm_entry_rates(state, cells)
            embedded = entry_rates(state.embed(), cells)
            worst = max(worst, float(np.max(np.abs(embedded - direct) / direct)))
        assert worst < 1e-12

    def test_single_group_core_posterior(self, tiny_tensor, mocker):
        dims = ModelDims(n_countries=4, n_actions=3, n_steps=3, n_communities=1, n_topics=1, n_regimes=1)
        state = gpirm_prior(dims, Hyperparams(eps0=0.5), RngStream(4))
        mocker.patch(
            "src.services.baselines.sample_gamma",
            side_effect=lambda shape, rate, rng, size=None: np.asarray(shape, float) / np.asarray(rate, float),
        )
        updated = gpirm_sweep(state, tiny_tensor, RngStream(4))
        exposure = 4 * 3 * 3 * 3
        assert updated.core[0, 0, 0, 0] == pytest.approx((0.5 + tiny_tensor.total) / (0.5 + exposure))

    @pytest.mark.parametrize("degree_corrected", [False, True])
    def test_sweep_keeps_state_valid(self, tiny_dims, tiny_tensor, rng, degree_corrected):
        state = gpirm_prior(tiny_dims, Hyperparams(eps0=1.0), rng, degree_corrected=degree_corrected)
        for _ in range(5):
            state = gpirm_sweep(state, tiny_tensor, rng)
        assert state.z_country.max() < 2 and state.z_action.max() < 2
        if not degree_corrected:
            assert np.all(state.theta_deg == 1.0)

    def test_sweep_is_deterministic(self, tiny_dims, tiny_tensor):
        state = gpirm_prior(tiny_dims, Hyperparams(eps0=1.0), RngStream(1), degree_corrected=True)
        a = gpirm_sweep(state, tiny_tensor, RngStream(6))
        b = gpirm_sweep(state, tiny_tensor, RngStream(6))
        assert np.array_equal(a.z_country, b.z_country)
        assert np.array_equal(a.core, b.core)

    def test_time_sweep_only_moves_time(self, tiny_dims, tiny_tensor, rng):
        state = gpirm_prior(tiny_dims, Hyperparams(eps0=1.0), rng)
        moved = gpirm_time_sweep(state, tiny_tensor, rng, 1.0 - np.eye(4))
        assert np.array_equal(moved.z_country, state.z_country)
        assert np.array_equal(moved.core, state.core)

    def test_array_round_trip(self, tiny_dims, rng):
        state = gpirm_prior(tiny_dims, Hyperparams(eps0=1.0), rng, degree_corrected=True)
        restored = GPIRMState.from_arrays(state.to_arrays())
        assert restored.degree_corrected
        assert np.array_equal(restored.z_time, state.z_time)
        assert restored.z_time.dtype == np.int64
