"""
Evaluation Service
Temporal split, activity masks, clamp-and-infer prediction and model comparison

The protocol trains on all but the last few time steps. The test window is split by a
dyad mask into a held-out portion and an observed portion; after training, only the
time-step factors are resampled against the observed portion, and the held-out cells
are scored by the Poisson probability of their counts under the averaged rate.
"""
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from typing import Iterable, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, Field, model_validator
from scipy.stats import poisson
from tqdm import tqdm

from src.core.config import AllocationMode, ModelTag
from src.core.errors import ConfigError, DataError
from src.core.logging_config import progress_enabled
from src.models.params import Hyperparams, ModelDims
from src.models.results import ComparisonRow, HeldOutMask, MaskSummary, PredictionResult
from src.models.tensors import CountTensor
from src.services.distributions import RngStream
from src.services.orchestrator import FitSettings, ModelAdapter, make_adapter, run_chain
from src.utils.tsv import PathOrStream, write_rows

logger = logging.getLogger(__name__)

COMPARISON_COLUMNS = ("model", "mask", "seed", "inverse_perplexity", "scaled_value", "wall_clock_seconds")


class EvaluationProtocol(BaseModel):
    """Sweep counts and saving rules of one train/test run"""
    holdout_steps: int = Field(default=3, ge=1)
    train_sweeps: int = Field(default=5000, ge=1)
    train_burn_in: Optional[int] = Field(default=None, ge=0)
    test_sweeps: int = Field(default=1000, ge=1)
    test_burn_in: int = Field(default=500, ge=0)
    save_every: int = Field(default=10, ge=1)
    include_zeros: bool = True

    @model_validator(mode="after")
    def check_schedule(self):
        if self.test_burn_in + self.save_every > self.test_sweeps:
            raise ValueError("test phase saves no samples: test_burn_in + save_every exceeds test_sweeps")
        return self

    def fit_settings(self) -> FitSettings:
        burn = self.train_sweeps // 2 if self.train_burn_in is None else self.train_burn_in
        return FitSettings(sweeps=self.train_sweeps, burn_in=burn, save_every=self.save_every)


def split_train_test(tensor: CountTensor, holdout_steps: int = 3) -> Tuple[CountTensor, CountTensor]:
    """Training steps [0, T−h) and test steps [T−h, T), each re-indexed from 0"""
    n_steps = tensor.dims[3]
    if n_steps <= holdout_steps:
        raise DataError(f"cannot hold out {holdout_steps} of {n_steps} time steps")
    cut = n_steps - holdout_steps
    return tensor.time_slice(0, cut), tensor.time_slice(cut, n_steps)


def mask_top_active(tensor: CountTensor, n: int = 15, invert: bool = False) -> HeldOutMask:
    """
    Hold out every dyad touching one of the `n` most active countries

    Activity is sender plus receiver token involvement over the whole tensor; ties are
    broken by the lower vocabulary index. `invert` returns the complementary mask.
    """
    n_countries = tensor.dims[0]
    if not 0 < n < n_countries:
        raise DataError(f"mask size {n} must lie in [1, {n_countries})")
    involvement = tensor.sender_totals() + tensor.receiver_totals()
    order = np.lexsort((np.arange(n_countries), -involvement))
    top = np.zeros(n_countries, dtype=bool)
    top[order[:n]] = True
    held = (top[:, None] | top[None, :]).astype(np.float64)
    np.fill_diagonal(held, 0.0)
    mask = HeldOutMask(held=held, name=f"top{n}", ranked=[int(i) for i in order[:n]])
    return mask.inverted() if invert else mask


def held_out_cells(mask: HeldOutMask, n_actions: int, n_steps: int) -> np.ndarray:
    """(n, 4) indices of every test-window cell under the held-out dyads, zeros included"""
    pairs = np.argwhere(mask.held > 0)
    if pairs.shape[0] == 0:
        raise DataError(f"mask {mask.name} holds out no dyads")
    a, t = np.meshgrid(np.arange(n_actions), np.arange(n_steps), indexing="ij")
    at = np.column_stack([a.ravel(), t.ravel()])
    return np.column_stack([
        np.repeat(pairs, at.shape[0], axis=0),
        np.tile(at, (pairs.shape[0], 1)),
    ]).astype(np.int64)


def inverse_perplexity(probabilities: Iterable[float]) -> float:
    """Geometric mean of element probabilities, exp(mean log p)"""
    p = np.asarray(list(probabilities), dtype=np.float64)
    if p.size == 0:
        raise DataError("inverse perplexity of an empty set")
    with np.errstate(divide="ignore"):
        return float(np.exp(np.mean(np.log(p))))


def predict_held_out(
    rates: np.ndarray,
    subs: np.ndarray,
    test: CountTensor,
    n_samples: int,
    include_zeros: bool = True,
) -> PredictionResult:
    """Score held-out cells with the Poisson pmf of their counts under averaged rates"""
    observed = test.to_dense()[tuple(subs.T)]
    if not include_zeros:
        keep = observed > 0
        subs, observed, rates = subs[keep], observed[keep], rates[keep]
    if observed.shape[0] == 0:
        raise DataError("no held-out elements to score")
    log_p = poisson.logpmf(observed, rates)
    return PredictionResult(
        subs=subs,
        observed=observed,
        rates=rates,
        probabilities=np.exp(log_p),
        inverse_perplexity=float(np.exp(np.mean(log_p))),
        n_samples=n_samples,
        include_zeros=include_zeros,
    )


def strong_generalization(
    train: CountTensor,
    test: CountTensor,
    mask: HeldOutMask,
    adapter: ModelAdapter,
    protocol: EvaluationProtocol,
    rng: RngStream,
) -> PredictionResult:
    """
    Train on `train`, clamp everything but the time factors, infer those on the observed
    test portion and score the held-out portion

    The trained state on `adapter.state` is left untouched; test-phase inference works on
    `adapter.test_state`.
    """
    _, _, n_actions, n_test = test.dims
    subs = held_out_cells(mask, n_actions, n_test)
    run_chain(adapter, train, protocol.fit_settings(), rng)

    observed_dyads = mask.observed
    observed = test.restrict_dyads(observed_dyads)
    adapter.start_test(n_test, rng)
    rate_sum = np.zeros(subs.shape[0])
    n_samples = 0
    for sweep in tqdm(range(1, protocol.test_sweeps + 1), desc=f"{adapter.tag.value} test", disable=not progress_enabled()):
        adapter.test_sweep(observed, observed_dyads, rng)
        if sweep > protocol.test_burn_in and sweep % protocol.save_every == 0:
            rate_sum += adapter.entry_rates(subs, test=True)
            n_samples += 1

    result = predict_held_out(rate_sum / n_samples, subs, test, n_samples, protocol.include_zeros)
    logger.info(
        f"{adapter.tag.value} on {mask.name}: inverse perplexity {result.inverse_perplexity:.6f} "
        f"over {result.n_elements} held-out elements"
    )
    return result


def scale_by_mask(rows: List[ComparisonRow]) -> List[ComparisonRow]:
    """
    Scale inverse perplexities to ratios against the best model on the same mask

    The best model on each mask scores 1.0 and the others score their fraction of it; this
    is a ratio, not a min-max rescaling, so the worst model does not map to 0.
    """
    best = {}
    for row in rows:
        best[row.mask] = max(best.get(row.mask, 0.0), row.inverse_perplexity)
    for row in rows:
        top = best[row.mask]
        row.scaled_value = row.inverse_perplexity / top if top > 0 else 0.0
    return rows


def compare_models(
    tensor: CountTensor,
    masks: Sequence[HeldOutMask],
    models: Sequence[ModelTag],
    seeds: Sequence[int],
    protocol: EvaluationProtocol,
    latent_dims: Tuple[int, int, int],
    hyper: Hyperparams,
    allocation: AllocationMode = AllocationMode.COMPOSITIONAL,
    workers: int = 1,
) -> List[ComparisonRow]:
    """
    Run every (model, mask, seed) combination through `strong_generalization`

    Runs are independent; with `workers > 1` they execute on a thread pool. Row order is
    mask, model, seed regardless of completion order.
    """
    if not models or not seeds:
        raise ConfigError("compare_models needs at least one model and one seed")
    train, test = split_train_test(tensor, protocol.holdout_steps)
    v, _, a, t = train.dims
    c, k, r = latent_dims
    dims = ModelDims(n_countries=v, n_actions=a, n_steps=t, n_communities=c, n_topics=k, n_regimes=r)

    def run(mask: HeldOutMask, model: ModelTag, seed: int) -> ComparisonRow:
        started = time.perf_counter()
        adapter = make_adapter(model, dims, hyper, allocation=allocation)
        result = strong_generalization(train, test, mask, adapter, protocol, RngStream(seed))
        return ComparisonRow(
            model=model,
            mask=mask.name,
            seed=seed,
            inverse_perplexity=result.inverse_perplexity,
            wall_clock_seconds=time.perf_counter() - started,
        )

    jobs = [(mask, model, seed) for mask in masks for model in models for seed in seeds]
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(lambda job: run(*job), jobs))
    else:
        rows = [run(*job) for job in jobs]
    return scale_by_mask(rows)


def write_comparison(rows: Sequence[ComparisonRow], target: PathOrStream) -> int:
    return write_rows(
        target,
        COMPARISON_COLUMNS,
        (
            (row.model.value, row.mask, row.seed, row.inverse_perplexity, row.scaled_value, row.wall_clock_seconds)
            for row in rows
        ),
    )


def _variance_to_mean(counts: np.ndarray) -> Optional[float]:
    if counts.shape[0] < 2 or counts.mean() == 0:
        return None
    return float(np.var(counts, ddof=1) / counts.mean())


def mask_summary(test: CountTensor, mask: HeldOutMask) -> MaskSummary:
    """Share of test tokens held out, density of held cells and count dispersion per portion"""
    held_entry = mask.held[test.subs[:, 0], test.subs[:, 1]] > 0
    _, _, n_actions, n_steps = test.dims
    n_held_cells = int(mask.held.sum()) * n_actions * n_steps
    held_counts = test.counts[held_entry]
    return MaskSummary(
        mask=mask.name,
        held_token_share=float(held_counts.sum() / test.total) if test.total else 0.0,
        held_nonzero_fraction=float(held_counts.shape[0] / n_held_cells) if n_held_cells else 0.0,
        held_variance_to_mean=_variance_to_mean(held_counts.astype(np.float64)),
        observed_variance_to_mean=_variance_to_mean(test.counts[~held_entry].astype(np.float64)),
    )
