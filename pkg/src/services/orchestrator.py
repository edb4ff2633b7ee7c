"""
Chain Orchestrator
Drives any of the four models through training sweeps, saved samples, traces and
checkpoints, and through the clamp-and-infer test phase

Each model is wrapped in a `ModelAdapter` so the runner and the evaluation protocol treat
BPTD and the baselines the same way.
"""
import logging
from abc import ABC, abstractmethod
from collections import OrderedDict
from pathlib import Path
from typing import Dict, Optional, Tuple

import numpy as np
from pydantic import BaseModel, Field
from scipy.special import gammaln
from tqdm import tqdm

from src.core.config import AllocationMode, ModelTag
from src.core.logging_config import progress_enabled
from src.models.params import BPTDState, Hyperparams, ModelDims
from src.models.tensors import CountTensor
from src.services import baselines, bptd_model, gibbs
from src.services.distributions import RngStream, sample_gamma
from src.services.trace_logger import TraceEntry, TraceLogger
from src.utils.checkpoint import write_checkpoint

logger = logging.getLogger(__name__)


class ModelAdapter(ABC):
    """Uniform interface over BPTD, BPTF, GPIRM and DCGPIRM chains"""

    tag: ModelTag

    def __init__(self, dims: ModelDims, hyper: Hyperparams):
        self.dims = dims
        self.hyper = hyper
        self.state = None
        self.test_state = None
        self.train_tensor: Optional[CountTensor] = None

    @abstractmethod
    def initialize(self, tensor: CountTensor, rng: RngStream) -> None:
        """Draw an initial state from the prior for a training tensor"""

    @abstractmethod
    def fit_sweep(self, rng: RngStream) -> None:
        """One training sweep on the tensor given to `initialize`"""

    @abstractmethod
    def entry_rates(self, subs: np.ndarray, test: bool = False) -> np.ndarray:
        """Rates of the given cells under the training (or test-phase) state"""

    @abstractmethod
    def total_rate(self) -> float:
        """Sum of training rates over all dyads, actions and steps"""

    @abstractmethod
    def start_test(self, n_steps: int, rng: RngStream) -> None:
        """Copy the trained state with fresh prior time factors for `n_steps` test steps"""

    @abstractmethod
    def test_sweep(self, observed: CountTensor, dyads: np.ndarray, rng: RngStream) -> None:
        """Resample only the test-phase time factors against the observed portion"""

    @abstractmethod
    def to_arrays(self) -> "OrderedDict[str, np.ndarray]":
        """Named arrays of the current state, in checkpoint order"""

    def log_likelihood(self) -> float:
        ll = -self.total_rate()
        tensor = self.train_tensor
        if tensor is not None and tensor.nnz:
            y = tensor.counts.astype(np.float64)
            with np.errstate(divide="ignore"):
                ll += float(np.sum(y * np.log(self.entry_rates(tensor.subs)) - gammaln(y + 1.0)))
        return ll

    def eff_dims(self) -> Optional[Tuple[int, int, int]]:
        return None

    def scalars(self) -> Tuple[Optional[float], Optional[float]]:
        return None, None

    def checkpoint_dims(self) -> Dict[str, int]:
        return {k: int(v) for k, v in self.dims.model_dump().items()}


class BPTDAdapter(ModelAdapter):
    tag = ModelTag.BPTD

    def __init__(
        self,
        dims: ModelDims,
        hyper: Hyperparams,
        allocation: AllocationMode = AllocationMode.COMPOSITIONAL,
        workers: int = 1,
        chunk_elements: int = gibbs.DEFAULT_JOINT_CHUNK,
        threshold_fraction: float = 0.05,
    ):
        super().__init__(dims, hyper)
        self.allocation = allocation
        self.workers = workers
        self.chunk_elements = chunk_elements
        self.threshold_fraction = threshold_fraction
        self.context: Optional[gibbs.SweepContext] = None
        self.test_context: Optional[gibbs.SweepContext] = None

    def initialize(self, tensor: CountTensor, rng: RngStream) -> None:
        self.train_tensor = tensor
        self.state = bptd_model.sample_prior(self.dims.with_steps(tensor.dims[3]), self.hyper, rng)
        self.context = gibbs.SweepContext.for_tensor(
            tensor, workers=self.workers, chunk_elements=self.chunk_elements,
        )

    def fit_sweep(self, rng: RngStream) -> None:
        self.state = gibbs.gibbs_sweep(self.state, None, rng, self.allocation, context=self.context)

    def entry_rates(self, subs: np.ndarray, test: bool = False) -> np.ndarray:
        return bptd_model.entry_rates(self.test_state if test else self.state, subs)

    def total_rate(self) -> float:
        return bptd_model.total_rate(self.state)

    def start_test(self, n_steps: int, rng: RngStream) -> None:
        self.test_state = self.state.copy()
        self.test_state.psi = sample_gamma(self.hyper.eps0, self.hyper.eps0, rng, size=(n_steps, self.dims.n_regimes))
        self.test_context = None

    def test_sweep(self, observed: CountTensor, dyads: np.ndarray, rng: RngStream) -> None:
        if self.test_context is None:
            self.test_context = gibbs.SweepContext.for_tensor(
                observed, dyads=dyads, workers=self.workers, chunk_elements=self.chunk_elements,
            )
        sources = gibbs.allocate(self.test_state, self.test_context, rng, self.allocation)
        gibbs.update_psi(self.test_state, sources, rng, dyads)

    def to_arrays(self) -> "OrderedDict[str, np.ndarray]":
        return self.state.to_arrays()

    def eff_dims(self) -> Optional[Tuple[int, int, int]]:
        return bptd_model.effective_dims(self.state, self.threshold_fraction)

    def scalars(self) -> Tuple[Optional[float], Optional[float]]:
        return self.state.delta, self.state.zeta


class BPTFAdapter(ModelAdapter):
    tag = ModelTag.BPTF

    def __init__(self, dims: ModelDims, hyper: Hyperparams, n_classes: Optional[int] = None):
        super().__init__(dims, hyper)
        self.n_classes = n_classes
        self.tokens = None
        self.test_tokens = None

    def initialize(self, tensor: CountTensor, rng: RngStream) -> None:
        self.train_tensor = tensor
        if self.n_classes is None:
            self.n_classes = baselines.bptf_q_for_parity(
                self.dims.n_countries, self.dims.n_actions, self.dims.n_steps,
                self.dims.n_communities, self.dims.n_topics, self.dims.n_regimes,
            )
        v, _, a, t = tensor.dims
        self.state = baselines.bptf_prior(v, a, t, self.n_classes, self.hyper, rng)
        self.tokens = tensor.tokens()

    def fit_sweep(self, rng: RngStream) -> None:
        self.state = baselines.bptf_sweep(self.state, None, rng, tokens=self.tokens)

    def entry_rates(self, subs: np.ndarray, test: bool = False) -> np.ndarray:
        return baselines.bptf_entry_rates(self.test_state if test else self.state, subs)

    def total_rate(self) -> float:
        return baselines.bptf_total_rate(self.state)

    def start_test(self, n_steps: int, rng: RngStream) -> None:
        self.test_state = self.state.copy()
        self.test_state.psi = sample_gamma(self.hyper.eps0, self.hyper.eps0, rng, size=(n_steps, self.n_classes))
        self.test_tokens = None

    def test_sweep(self, observed: CountTensor, dyads: np.ndarray, rng: RngStream) -> None:
        if self.test_tokens is None:
            self.test_tokens = observed.tokens()
        sources = baselines.bptf_allocate(self.test_state, self.test_tokens, rng)
        baselines.bptf_update_time(self.test_state, sources, rng, dyads)

    def to_arrays(self) -> "OrderedDict[str, np.ndarray]":
        return self.state.to_arrays()

    def scalars(self) -> Tuple[Optional[float], Optional[float]]:
        return None, self.state.zeta

    def checkpoint_dims(self) -> Dict[str, int]:
        dims = super().checkpoint_dims()
        dims["n_classes"] = int(self.n_classes or 0)
        return dims


class GPIRMAdapter(ModelAdapter):
    tag = ModelTag.GPIRM
    degree_corrected = False

    def initialize(self, tensor: CountTensor, rng: RngStream) -> None:
        self.train_tensor = tensor
        self.state = baselines.gpirm_prior(
            self.dims.with_steps(tensor.dims[3]), self.hyper, rng, self.degree_corrected,
        )

    def fit_sweep(self, rng: RngStream) -> None:
        self.state = baselines.gpirm_sweep(self.state, self.train_tensor, rng)

    def entry_rates(self, subs: np.ndarray, test: bool = False) -> np.ndarray:
        return baselines.gpirm_entry_rates(self.test_state if test else self.state, subs)

    def total_rate(self) -> float:
        return bptd_model.total_rate(self.state.embed())

    def start_test(self, n_steps: int, rng: RngStream) -> None:
        self.test_state = self.state.copy()
        self.test_state.z_time = rng.generator.integers(0, self.dims.n_regimes, n_steps)
        self.test_state.psi_deg = (
            sample_gamma(self.hyper.eps0, self.hyper.eps0, rng, size=n_steps)
            if self.degree_corrected else np.ones(n_steps)
        )

    def test_sweep(self, observed: CountTensor, dyads: np.ndarray, rng: RngStream) -> None:
        self.test_state = baselines.gpirm_time_sweep(self.test_state, observed, rng, dyads)

    def to_arrays(self) -> "OrderedDict[str, np.ndarray]":
        return self.state.to_arrays()


class DCGPIRMAdapter(GPIRMAdapter):
    tag = ModelTag.DCGPIRM
    degree_corrected = True


def make_adapter(
    tag: ModelTag,
    dims: ModelDims,
    hyper: Hyperparams,
    allocation: AllocationMode = AllocationMode.COMPOSITIONAL,
    workers: int = 1,
    chunk_elements: int = gibbs.DEFAULT_JOINT_CHUNK,
    threshold_fraction: float = 0.05,
    n_classes: Optional[int] = None,
) -> ModelAdapter:
    if tag == ModelTag.BPTD:
        return BPTDAdapter(dims, hyper, allocation, workers, chunk_elements, threshold_fraction)
    if tag == ModelTag.BPTF:
        return BPTFAdapter(dims, hyper, n_classes)
    if tag == ModelTag.GPIRM:
        return GPIRMAdapter(dims, hyper)
    return DCGPIRMAdapter(dims, hyper)


class PosteriorMean:
    """Running mean of named state arrays over saved samples"""

    def __init__(self):
        self.n_samples = 0
        self.sums: "OrderedDict[str, np.ndarray]" = OrderedDict()

    def add(self, arrays: Dict[str, np.ndarray]) -> None:
        for name, arr in arrays.items():
            if name in self.sums:
                self.sums[name] = self.sums[name] + arr
            else:
                self.sums[name] = np.array(arr, dtype=np.float64)
        self.n_samples += 1

    def mean(self) -> "OrderedDict[str, np.ndarray]":
        if not self.n_samples:
            return OrderedDict()
        return OrderedDict((name, s / self.n_samples) for name, s in self.sums.items())

    def mean_state(self) -> Optional[BPTDState]:
        """Posterior-mean BPTD state"""
        if not self.n_samples:
            return None
        return BPTDState.from_arrays(self.mean())


class FitSettings(BaseModel):
    """Sweep schedule of one training run"""
    sweeps: int = Field(default=5000, ge=0)
    burn_in: int = Field(default=2500, ge=0)
    save_every: int = Field(default=10, ge=1)


class ChainResult(BaseModel):
    model: ModelTag
    sweeps: int
    saved_samples: int
    final_log_likelihood: float
    eff_dims: Optional[Tuple[int, int, int]] = None
    checkpoint: Optional[Path] = None
    posterior_mean_checkpoint: Optional[Path] = None


def run_chain(
    adapter: ModelAdapter,
    tensor: CountTensor,
    schedule: FitSettings,
    rng: RngStream,
    trace: Optional[TraceLogger] = None,
    out_dir: Optional[Path] = None,
) -> ChainResult:
    """
    Train a model: initialize from the prior, sweep, trace every `save_every` sweeps

    Samples after `burn_in` at the save cadence feed the posterior mean (BPTD only).
    The final state, and the posterior mean when one exists, are checkpointed under
    `out_dir`.
    """
    adapter.initialize(tensor, rng)
    posterior = PosteriorMean() if adapter.tag == ModelTag.BPTD else None
    trace = trace or TraceLogger()
    logger.info(f"Fitting {adapter.tag.value} for {schedule.sweeps} sweeps on {tensor.total} tokens")

    for it in tqdm(range(1, schedule.sweeps + 1), desc=adapter.tag.value, disable=not progress_enabled()):
        adapter.fit_sweep(rng)
        if it % schedule.save_every:
            continue
        delta, zeta = adapter.scalars()
        trace.log(TraceEntry(adapter.tag.value, it, adapter.log_likelihood(), adapter.eff_dims(), delta, zeta))
        if posterior is not None and it > schedule.burn_in:
            posterior.add(adapter.to_arrays())

    result = ChainResult(
        model=adapter.tag,
        sweeps=schedule.sweeps,
        saved_samples=posterior.n_samples if posterior else 0,
        final_log_likelihood=adapter.log_likelihood(),
        eff_dims=adapter.eff_dims(),
    )
    if out_dir is not None:
        out_dir = Path(out_dir)
        result.checkpoint = write_checkpoint(
            out_dir / f"{adapter.tag.value}.ckpt", adapter.tag.value, adapter.checkpoint_dims(), adapter.to_arrays(),
        )
        if posterior is not None and posterior.n_samples:
            result.posterior_mean_checkpoint = write_checkpoint(
                out_dir / f"{adapter.tag.value}.mean.ckpt", adapter.tag.value,
                adapter.checkpoint_dims(), posterior.mean(),
            )
    logger.info(f"Finished {adapter.tag.value}: log-lik {result.final_log_likelihood:.4f}")
    return result
