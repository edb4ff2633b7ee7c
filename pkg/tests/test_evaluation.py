"""
Test suite for the evaluation protocol: split, masks, clamp-and-infer and comparison
"""
import io

import numpy as np
import pytest
from scipy.stats import norm, poisson

from src.core.config import ModelTag
from src.core.errors import ConfigError, DataError
from src.models.params import Hyperparams, ModelDims
from src.models.results import ComparisonRow, HeldOutMask
from src.models.tensors import CountTensor, all_dyads
from src.services.bptd_model import planted_state, simulate
from src.services.distributions import RngStream
from src.services.evaluation import (
    EvaluationProtocol,
    compare_models,
    held_out_cells,
    inverse_perplexity,
    mask_summary,
    mask_top_active,
    predict_held_out,
    scale_by_mask,
    split_train_test,
    strong_generalization,
    write_comparison,
)
from src.services.orchestrator import make_adapter


@pytest.fixture
def quick_protocol():
    return EvaluationProtocol(
        holdout_steps=3, train_sweeps=6, test_sweeps=6, test_burn_in=2, save_every=2,
    )


@pytest.fixture
def planted_tensor():
    """6 countries, 3 actions, 7 steps drawn from a planted two-community state"""
    dims = ModelDims(n_countries=6, n_actions=3, n_steps=7, n_communities=2, n_topics=2, n_regimes=2)
    rng = RngStream(21)
    state = planted_state(dims, rng, n_active_communities=2, n_active_topics=2, total_events=400.0)
    return simulate(state, dims, rng)


def tensor_from_pairs(n_countries, pairs):
    """Single action, single step tensor from {(i, j): count}"""
    subs = np.array([[i, j, 0, 0] for i, j in pairs])
    return CountTensor.from_arrays((n_countries, n_countries, 1, 1), subs, np.array(list(pairs.values())))


class TestSplit:
    def test_last_steps_held_out(self, tiny_tensor):
        train, test = split_train_test(tiny_tensor, holdout_steps=1)
        assert train.dims == (4, 4, 3, 2)
        assert test.dims == (4, 4, 3, 1)
        assert train.total == 7
        assert test.total == 5

    def test_not_enough_steps(self, tiny_tensor):
        with pytest.raises(DataError):
            split_train_test(tiny_tensor, holdout_steps=3)


class TestMasks:
    """Activity-ranked dyad masks"""

    def test_ranking_by_involvement(self):
        # involvements: country 0 → 10, country 3 → 6, country 1 → 5, country 2 → 1
        tensor = tensor_from_pairs(4, {(0, 3): 5, (0, 1): 5, (2, 3): 1})
        mask = mask_top_active(tensor, n=1)
        assert mask.ranked == [0]
        assert mask.held_pairs == {(0, 1), (0, 2), (0, 3), (1, 0), (2, 0), (3, 0)}
        assert mask.name == "top1"
        assert mask_top_active(tensor, n=2).ranked == [0, 3]

    def test_ties_broken_by_index(self):
        tensor = tensor_from_pairs(4, {(2, 1): 3, (3, 0): 3})
        assert mask_top_active(tensor, n=2).ranked == [0, 1]

    def test_inverted_mask_is_complement(self, tiny_tensor):
        mask = mask_top_active(tiny_tensor, n=1)
        inverse = mask_top_active(tiny_tensor, n=1, invert=True)
        assert inverse.name == "inverse-top1"
        assert np.array_equal(mask.held + inverse.held, all_dyads(4))
        assert np.array_equal(mask.observed, inverse.held)
        assert inverse.inverted().name == "top1"

    @pytest.mark.parametrize("n", [0, 4])
    def test_size_bounds(self, tiny_tensor, n):
        with pytest.raises(DataError):
            mask_top_active(tiny_tensor, n=n)

    def test_heavy_tailed_activity_share(self):
        v = 233
        weights = np.exp(0.54 * norm.ppf((np.arange(v) + 0.5) / v))
        rates = np.outer(weights, weights)
        np.fill_diagonal(rates, 0.0)
        rates *= 200_000 / rates.sum()
        counts = np.random.default_rng(0).poisson(rates)
        tensor = CountTensor.from_dense(counts[:, :, None, None])
        share = mask_summary(tensor, mask_top_active(tensor, n=15)).held_token_share
        assert 0.2 <= share <= 0.4

    def test_held_out_cells(self):
        held = np.zeros((4, 4))
        held[0, 1] = held[1, 0] = 1.0
        cells = held_out_cells(HeldOutMask(held=held), n_actions=3, n_steps=3)
        assert cells.shape == (18, 4)
        assert len({tuple(c) for c in cells}) == 18
        assert set(map(tuple, cells[:, :2])) == {(0, 1), (1, 0)}

    def test_empty_mask_rejected(self):
        with pytest.raises(DataError):
            held_out_cells(HeldOutMask(held=np.zeros((3, 3)), name="empty"), 1, 1)

    def test_mask_summary(self, tiny_tensor):
        held = np.zeros((4, 4))
        held[3, 0] = 1.0
        summary = mask_summary(tiny_tensor, HeldOutMask(held=held, name="one"))
        assert summary.held_token_share == pytest.approx(4 / 12)
        assert summary.held_nonzero_fraction == pytest.approx(1 / 9)
        assert summary.held_variance_to_mean is None


class TestScoring:
    """Plug-in Poisson probabilities and their geometric mean"""

    def test_inverse_perplexity(self):
        assert inverse_perplexity([0.1, 0.9]) == pytest.approx(0.3)
        assert inverse_perplexity([1.0, 1.0]) == 1.0

    def test_inverse_perplexity_empty(self):
        with pytest.raises(DataError):
            inverse_perplexity([])

    def test_predict_held_out(self):
        test = CountTensor.from_arrays((2, 2, 1, 1), np.array([[0, 1, 0, 0]]), np.array([2]))
        subs = np.array([[0, 1, 0, 0], [1, 0, 0, 0]])
        result = predict_held_out(np.array([1.0, 2.0]), subs, test, n_samples=5)
        assert result.probabilities == pytest.approx([poisson.pmf(2, 1.0), np.exp(-2.0)])
        assert result.inverse_perplexity == pytest.approx(np.sqrt(poisson.pmf(2, 1.0) * np.exp(-2.0)))
        assert result.n_elements == 2

    def test_predict_without_zeros(self):
        test = CountTensor.from_arrays((2, 2, 1, 1), np.array([[0, 1, 0, 0]]), np.array([2]))
        subs = np.array([[0, 1, 0, 0], [1, 0, 0, 0]])
        result = predict_held_out(np.array([1.0, 2.0]), subs, test, n_samples=5, include_zeros=False)
        assert result.n_elements == 1
        assert result.inverse_perplexity == pytest.approx(poisson.pmf(2, 1.0))

    def test_scale_by_mask(self):
        rows = scale_by_mask([
            ComparisonRow(model=ModelTag.BPTD, mask="top15", seed=1, inverse_perplexity=0.4),
            ComparisonRow(model=ModelTag.GPIRM, mask="top15", seed=1, inverse_perplexity=0.2),
            ComparisonRow(model=ModelTag.BPTD, mask="inverse-top15", seed=1, inverse_perplexity=0.9),
        ])
        assert [row.scaled_value for row in rows] == pytest.approx([1.0, 0.5, 1.0])

    def test_protocol_must_save_samples(self):
        with pytest.raises(ValueError):
            EvaluationProtocol(test_sweeps=10, test_burn_in=8, save_every=5)


class TestStrongGeneralization:
    """Clamp-and-infer on the observed test portion"""

    def test_clamp_contract(self, planted_tensor, quick_protocol):
        train, test = split_train_test(planted_tensor, 3)
        mask = mask_top_active(planted_tensor, n=2)
        dims = ModelDims(n_countries=6, n_actions=3, n_steps=4, n_communities=2, n_topics=2, n_regimes=2)
        adapter = make_adapter(ModelTag.BPTD, dims, Hyperparams(eps0=1.0))

        trained = []
        start_test = adapter.start_test

        def capture(n_steps, rng):
            trained.append(adapter.state.copy())
            start_test(n_steps, rng)

        adapter.start_test = capture
        result = strong_generalization(train, test, mask, adapter, quick_protocol, RngStream(3))

        for name in ("theta", "phi", "psi", "core", "eta_within", "eta_between", "nu", "rho"):
            assert np.array_equal(getattr(adapter.state, name), getattr(trained[0], name))
        assert np.array_equal(adapter.test_state.theta, trained[0].theta)
        assert np.array_equal(adapter.test_state.core, trained[0].core)
        assert adapter.test_state.psi.shape == (3, 2)
        assert result.n_samples == 2
        assert result.n_elements == int(mask.held.sum()) * 3 * 3
        assert 0.0 < result.inverse_perplexity <= 1.0

    @pytest.mark.parametrize("model", list(ModelTag))
    def test_every_model_scores(self, planted_tensor, quick_protocol, model):
        train, test = split_train_test(planted_tensor, 3)
        mask = mask_top_active(planted_tensor, n=2, invert=True)
        dims = ModelDims(n_countries=6, n_actions=3, n_steps=4, n_communities=2, n_topics=2, n_regimes=2)
        result = strong_generalization(
            train, test, mask, make_adapter(model, dims, Hyperparams(eps0=1.0)), quick_protocol, RngStream(4),
        )
        assert np.all(result.rates > 0)
        assert 0.0 < result.inverse_perplexity <= 1.0

    def test_compare_models(self, planted_tensor, quick_protocol):
        masks = [mask_top_active(planted_tensor, n=2), mask_top_active(planted_tensor, n=2, invert=True)]
        rows = compare_models(
            planted_tensor, masks, [ModelTag.BPTD, ModelTag.GPIRM], [1], quick_protocol,
            latent_dims=(2, 2, 2), hyper=Hyperparams(eps0=1.0),
        )
        assert [(row.mask, row.model) for row in rows] == [
            ("top2", ModelTag.BPTD), ("top2", ModelTag.GPIRM),
            ("inverse-top2", ModelTag.BPTD), ("inverse-top2", ModelTag.GPIRM),
        ]
        for name in ("top2", "inverse-top2"):
            assert max(row.scaled_value for row in rows if row.mask == name) == pytest.approx(1.0)

        buffer = io.StringIO()
        assert write_comparison(rows, buffer) == 4
        assert buffer.getvalue().splitlines()[0].split("\t")[0] == "model"

    def test_compare_models_is_reproducible_across_workers(self, planted_tensor, quick_protocol):
        masks = [mask_top_active(planted_tensor, n=2)]
        kwargs = dict(latent_dims=(2, 2, 2), hyper=Hyperparams(eps0=1.0))
        serial = compare_models(planted_tensor, masks, [ModelTag.BPTD, ModelTag.BPTF], [1, 2], quick_protocol, **kwargs)
        pooled = compare_models(
            planted_tensor, masks, [ModelTag.BPTD, ModelTag.BPTF], [1, 2], quick_protocol, workers=2, **kwargs,
        )
        assert [r.inverse_perplexity for r in serial] == [r.inverse_perplexity for r in pooled]

    def test_compare_models_needs_models(self, planted_tensor, quick_protocol):
        with pytest.raises(ConfigError):
            compare_models(
                planted_tensor, [mask_top_active(planted_tensor, n=2)], [], [1], quick_protocol,
                latent_dims=(2, 2, 2), hyper=Hyperparams(),
            )
