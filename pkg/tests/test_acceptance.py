"""
End-to-end acceptance runs: posterior recovery, predictive ordering and allocation cost

Everything here is marked slow; run with `pytest -m slow`.
"""
import numpy as np
import pytest
from scipy import stats
from sklearn.metrics import adjusted_rand_score

from src.core.config import AllocationMode, ModelTag, resolve_gamma0
from src.models.params import Hyperparams, ModelDims
from src.models.tensors import TokenArrays
from src.services.benchmark import benchmark_allocation
from src.services.bptd_model import effective_dims, planted_state, simulate
from src.services.distributions import RngStream
from src.services.evaluation import EvaluationProtocol, compare_models, mask_top_active
from src.services.gibbs import allocate_compositional, allocation_cost
from src.services.orchestrator import BPTDAdapter, FitSettings, run_chain

pytestmark = pytest.mark.slow

PLANTED_DIMS = ModelDims(n_countries=30, n_actions=6, n_steps=8, n_communities=3, n_topics=2, n_regimes=1)
FIT_LATENT = (10, 6, 3)
FIT_HYPER = Hyperparams(eps0=0.1, gamma0=resolve_gamma0(*FIT_LATENT))


def planted_tensor(seed: int):
    rng = RngStream(seed)
    truth = planted_state(PLANTED_DIMS, rng)
    return truth, simulate(truth, PLANTED_DIMS, rng)


class TestCompositionalChain:
    def test_single_token_chain_matches_enumeration(self, tiny_state):
        state = tiny_state.copy()
        draws = RngStream(31)
        for name in ("theta", "phi", "psi", "core"):
            setattr(state, name, 0.5 + draws.uniform(getattr(state, name).shape))
        rng = RngStream(32)
        tokens = TokenArrays(np.array([2]), np.array([0]), np.array([1]), np.array([1]))
        assignments = None
        visits = np.zeros(16, dtype=np.int64)
        for sweep in range(100_000):
            assignments, _ = allocate_compositional(state, tokens, assignments, rng)
            if sweep % 10 == 9:
                flat = np.ravel_multi_index((assignments.c, assignments.d, assignments.k, assignments.r), (2, 2, 2, 2))
                visits[flat[0]] += 1
        weights = np.einsum("c,d,k,r,cdkr->cdkr", state.theta[2], state.theta[0], state.phi[1], state.psi[1], state.core)
        expected = (weights / weights.sum()).ravel() * visits.sum()
        assert stats.chisquare(visits, expected).pvalue > 0.01


class TestRecovery:
    """Planted three-community structure is found from an over-specified fit"""

    def test_communities_and_effective_dims(self):
        recovered, sized = 0, 0
        for seed in range(10):
            truth, tensor = planted_tensor(seed)
            dims = PLANTED_DIMS.model_copy(update=dict(zip(("n_communities", "n_topics", "n_regimes"), FIT_LATENT)))
            adapter = BPTDAdapter(dims, FIT_HYPER, allocation=AllocationMode.COMPOSITIONAL)
            run_chain(adapter, tensor, FitSettings(sweeps=400, burn_in=200, save_every=20), RngStream(100 + seed))
            ari = adjusted_rand_score(truth.theta.argmax(axis=1), adapter.state.theta.argmax(axis=1))
            recovered += ari >= 0.9
            sized += effective_dims(adapter.state)[0] in (3, 4)
        assert recovered >= 8
        assert sized >= 9


class TestPredictiveOrdering:
    def test_mixed_membership_beats_single_membership(self):
        _, tensor = planted_tensor(7)
        protocol = EvaluationProtocol(
            holdout_steps=3, train_sweeps=500, test_sweeps=200, test_burn_in=100, save_every=10,
        )
        rows = compare_models(
            tensor, [mask_top_active(tensor, 15)], list(ModelTag), seeds=range(5),
            protocol=protocol, latent_dims=FIT_LATENT, hyper=FIT_HYPER,
        )
        mean = {
            tag: np.mean([row.inverse_perplexity for row in rows if row.model == tag])
            for tag in ModelTag
        }
        # directional comparison; ties within 1% count as equal
        assert mean[ModelTag.BPTD] >= 0.99 * mean[ModelTag.BPTF]
        assert mean[ModelTag.BPTD] > mean[ModelTag.GPIRM]
        single = max(mean[ModelTag.GPIRM], mean[ModelTag.DCGPIRM])
        assert min(mean[ModelTag.BPTD], mean[ModelTag.BPTF]) >= 0.99 * single


class TestAllocationCost:
    def test_reference_grid_point(self):
        cost = allocation_cost(ModelDims(
            n_countries=2, n_actions=1, n_steps=1, n_communities=50, n_topics=10, n_regimes=5,
        ))
        assert cost.ratio == pytest.approx(125_000 / 115)

    def test_measured_speedup(self):
        row, = benchmark_allocation([(50, 10, 5)], RngStream(3), n_tokens=500, sweeps=1)
        assert row.speedup >= 100
