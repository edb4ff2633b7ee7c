"""
Test suite for model adapters and the chain runner
"""
import numpy as np
import pytest

from src.core.config import AllocationMode, ModelTag
from src.models.params import BPTDState, Hyperparams
from src.services.distributions import RngStream
from src.services.orchestrator import (
    BPTDAdapter,
    BPTFAdapter,
    DCGPIRMAdapter,
    FitSettings,
    GPIRMAdapter,
    PosteriorMean,
    make_adapter,
    run_chain,
)
from src.services.trace_logger import TraceLogger
from src.utils.checkpoint import read_checkpoint


class TestAdapters:
    @pytest.mark.parametrize("tag,cls", [
        (ModelTag.BPTD, BPTDAdapter),
        (ModelTag.BPTF, BPTFAdapter),
        (ModelTag.GPIRM, GPIRMAdapter),
        (ModelTag.DCGPIRM, DCGPIRMAdapter),
    ])
    def test_make_adapter(self, tiny_dims, tag, cls):
        adapter = make_adapter(tag, tiny_dims, Hyperparams())
        assert isinstance(adapter, cls)
        assert adapter.tag == tag

    def test_bptf_class_count_from_parity(self, tiny_dims, tiny_tensor, rng):
        adapter = make_adapter(ModelTag.BPTF, tiny_dims, Hyperparams(eps0=1.0))
        adapter.initialize(tiny_tensor, rng)
        # ⌈(4·2 + 3·2 + 3·2 + 16) / (4 + 4 + 3 + 3 + 1)⌉
        assert adapter.n_classes == 3
        assert adapter.checkpoint_dims()["n_classes"] == 3

    @pytest.mark.parametrize("tag", list(ModelTag))
    def test_log_likelihood_is_finite(self, tiny_dims, tiny_tensor, rng, tag):
        adapter = make_adapter(tag, tiny_dims, Hyperparams(eps0=1.0))
        adapter.initialize(tiny_tensor, rng)
        adapter.fit_sweep(rng)
        assert np.isfinite(adapter.log_likelihood())
        assert adapter.total_rate() > 0


class TestPosteriorMean:
    def test_running_mean(self):
        mean = PosteriorMean()
        mean.add({"x": np.array([1.0, 2.0])})
        mean.add({"x": np.array([3.0, 6.0])})
        assert mean.mean()["x"].tolist() == [2.0, 4.0]
        assert mean.n_samples == 2

    def test_empty(self):
        assert PosteriorMean().mean_state() is None

    def test_mean_state(self, tiny_state):
        mean = PosteriorMean()
        mean.add(tiny_state.to_arrays())
        state = mean.mean_state()
        assert isinstance(state, BPTDState)
        assert np.allclose(state.core, tiny_state.core)


class TestRunChain:
    """Training runs: trace cadence, posterior mean and checkpoints"""

    def test_bptd_run(self, tiny_dims, tiny_tensor, temp_dir):
        adapter = BPTDAdapter(tiny_dims, Hyperparams(eps0=1.0), allocation=AllocationMode.JOINT)
        trace = TraceLogger()
        result = run_chain(adapter, tiny_tensor, FitSettings(sweeps=12, burn_in=4, save_every=2), RngStream(1), trace, temp_dir)
        assert [e["iteration"] for e in trace.get_entries()] == [2, 4, 6, 8, 10, 12]
        assert result.saved_samples == 4
        assert result.eff_dims is not None
        model, dims, arrays = read_checkpoint(result.checkpoint)
        assert model == "bptd"
        assert dims["n_countries"] == 4
        assert result.posterior_mean_checkpoint.name == "bptd.mean.ckpt"

    def test_seed_reproducibility(self, tiny_dims, tiny_tensor):
        finals = []
        for _ in range(2):
            adapter = BPTDAdapter(tiny_dims, Hyperparams(eps0=1.0))
            run_chain(adapter, tiny_tensor, FitSettings(sweeps=5, burn_in=2, save_every=1), RngStream(8))
            finals.append(adapter.state.core.copy())
        assert np.array_equal(finals[0], finals[1])

    @pytest.mark.parametrize("tag", [ModelTag.BPTF, ModelTag.GPIRM, ModelTag.DCGPIRM])
    def test_baseline_run_has_no_posterior_mean(self, tiny_dims, tiny_tensor, temp_dir, tag):
        adapter = make_adapter(tag, tiny_dims, Hyperparams(eps0=1.0))
        result = run_chain(adapter, tiny_tensor, FitSettings(sweeps=4, burn_in=1, save_every=2), RngStream(2), out_dir=temp_dir)
        assert result.saved_samples == 0
        assert result.posterior_mean_checkpoint is None
        assert result.checkpoint.name == f"{tag.value}.ckpt"
        assert result.eff_dims is None
