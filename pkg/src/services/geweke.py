"""
Geweke Harness
Joint-distribution test of a sampler: marginal-conditional draws (prior, then data) are
compared with successive-conditional draws (one sweep, then fresh data) on scalar statistics

A correct sampler leaves the joint prior of (parameters, data) invariant, so each
statistic has the same mean under both simulators.
"""
import logging
import math
from dataclasses import dataclass
from typing import Any, Callable, Dict, List, Optional

import numpy as np
from tqdm import tqdm

from src.core.config import AllocationMode, ModelTag
from src.core.logging_config import progress_enabled
from src.models.params import Hyperparams, ModelDims
from src.models.results import GewekeResult
from src.models.tensors import CountTensor, all_dyads
from src.services import baselines, bptd_model, gibbs
from src.services.distributions import RngStream, sample_poisson

logger = logging.getLogger(__name__)

Statistic = Callable[[Any, CountTensor], float]


@dataclass
class GewekeModel:
    """Prior, data simulator, one-sweep transition and tracked statistics of one model"""
    prior: Callable[[RngStream], Any]
    simulate: Callable[[Any, RngStream], CountTensor]
    sweep: Callable[[Any, CountTensor, RngStream], Any]
    statistics: Dict[str, Statistic]


def _data_total(state: Any, data: CountTensor) -> float:
    return float(data.total)


def _bptd_model(
    dims: ModelDims,
    hyper: Hyperparams,
    allocation: AllocationMode,
    theta_shape_offset: float,
) -> GewekeModel:
    def sweep(state, data, rng):
        context = gibbs.SweepContext.for_tensor(data, theta_shape_offset=theta_shape_offset)
        if allocation == AllocationMode.COMPOSITIONAL:
            # assignments must match the freshly simulated tokens
            context.assignments, _ = gibbs.allocate_joint(state, context.tokens, rng)
        return gibbs.gibbs_sweep(state, None, rng, allocation, context=context)

    return GewekeModel(
        prior=lambda rng: bptd_model.sample_prior(dims, hyper, rng),
        simulate=lambda state, rng: bptd_model.simulate(state, None, rng),
        sweep=sweep,
        statistics={
            "mean_theta": lambda s, d: float(s.theta.mean()),
            "mean_phi": lambda s, d: float(s.phi.mean()),
            "mean_psi": lambda s, d: float(s.psi.mean()),
            "core_sum": lambda s, d: float(s.core.sum()),
            "mean_alpha": lambda s, d: float(s.alpha.mean()),
            "mean_nu": lambda s, d: float(s.nu.mean()),
            "mean_rho": lambda s, d: float(s.rho.mean()),
            "delta": lambda s, d: float(s.delta),
            "zeta": lambda s, d: float(s.zeta),
            "data_total": _data_total,
        },
    )


def _simulate_bptf(state: baselines.BPTFState, rng: RngStream) -> CountTensor:
    rates = np.einsum(
        "iq,jq,aq,tq,q->ijat",
        state.theta_send, state.theta_recv, state.phi, state.psi, state.lambda_q, optimize=True,
    )
    rates *= all_dyads(rates.shape[0])[:, :, None, None]
    return CountTensor.from_dense(sample_poisson(rates, rng))


def _bptf_model(dims: ModelDims, hyper: Hyperparams) -> GewekeModel:
    n_classes = dims.n_classes
    return GewekeModel(
        prior=lambda rng: baselines.bptf_prior(dims.n_countries, dims.n_actions, dims.n_steps, n_classes, hyper, rng),
        simulate=_simulate_bptf,
        sweep=lambda state, data, rng: baselines.bptf_sweep(state, data, rng),
        statistics={
            "mean_theta_send": lambda s, d: float(s.theta_send.mean()),
            "mean_theta_recv": lambda s, d: float(s.theta_recv.mean()),
            "mean_phi": lambda s, d: float(s.phi.mean()),
            "mean_psi": lambda s, d: float(s.psi.mean()),
            "lambda_sum": lambda s, d: float(s.lambda_q.sum()),
            "data_total": _data_total,
        },
    )


def _gpirm_model(dims: ModelDims, hyper: Hyperparams, degree_corrected: bool) -> GewekeModel:
    statistics: Dict[str, Statistic] = {
        "mean_core": lambda s, d: float(s.core.mean()),
        "country_in_first": lambda s, d: float(np.mean(s.z_country == 0)),
        "action_in_first": lambda s, d: float(np.mean(s.z_action == 0)),
        "time_in_first": lambda s, d: float(np.mean(s.z_time == 0)),
        "data_total": _data_total,
    }
    if degree_corrected:
        statistics["mean_theta_deg"] = lambda s, d: float(s.theta_deg.mean())
        statistics["mean_phi_deg"] = lambda s, d: float(s.phi_deg.mean())
    return GewekeModel(
        prior=lambda rng: baselines.gpirm_prior(dims, hyper, rng, degree_corrected),
        simulate=lambda state, rng: bptd_model.simulate(state.embed(), None, rng),
        sweep=lambda state, data, rng: baselines.gpirm_sweep(state, data, rng),
        statistics=statistics,
    )


def batch_means_mcse(values: np.ndarray, n_batches: Optional[int] = None) -> float:
    """Monte Carlo standard error of a chain mean from √n non-overlapping batch means"""
    values = np.asarray(values, dtype=np.float64)
    n = values.shape[0]
    n_batches = n_batches or max(2, int(math.isqrt(n)))
    size = n // n_batches
    if size < 1:
        return float(np.std(values, ddof=1) / math.sqrt(n)) if n > 1 else 0.0
    batch = values[: size * n_batches].reshape(n_batches, size).mean(axis=1)
    return float(np.std(batch, ddof=1) / math.sqrt(n_batches))


def geweke_z(forward: np.ndarray, successive: np.ndarray) -> float:
    """(mean_f − mean_s) / sqrt(var_f / n_f + mcse_s²)"""
    var_f = float(np.var(forward, ddof=1)) / forward.shape[0]
    denom = math.sqrt(var_f + batch_means_mcse(successive) ** 2)
    diff = float(forward.mean() - successive.mean())
    if denom == 0.0:
        return 0.0 if diff == 0.0 else math.copysign(math.inf, diff)
    return diff / denom


def _record(model: GewekeModel, state: Any, data: CountTensor, into: Dict[str, List[float]]) -> None:
    for name, stat in model.statistics.items():
        into[name].append(stat(state, data))


def geweke_test(
    dims: ModelDims,
    hyper: Hyperparams,
    n_samples: int,
    rng: RngStream,
    model: ModelTag = ModelTag.BPTD,
    allocation: AllocationMode = AllocationMode.COMPOSITIONAL,
    theta_shape_offset: float = 0.0,
    thin: int = 1,
) -> GewekeResult:
    """
    Run both simulators for `n_samples` draws each and z-score every tracked statistic

    Args:
        dims: tiny model dims (every conditional is exercised, so keep V·V·A·T small)
        hyper: priors; light tails (ε₀ ≈ 2, fixed δ and ζ) keep the z-scores well behaved
        model: sampler under test
        allocation: BPTD allocation scheme
        theta_shape_offset: added to the θ posterior shape in the successive chain only;
            a nonzero value is a deliberately broken sampler
        thin: sweeps between recorded successive-conditional draws

    Returns:
        GewekeResult: z-scores and the two means per statistic
    """
    if n_samples < 2:
        raise ValueError("geweke_test needs at least two samples")
    if model == ModelTag.BPTD:
        sampler = _bptd_model(dims, hyper, allocation, theta_shape_offset)
    elif model == ModelTag.BPTF:
        sampler = _bptf_model(dims, hyper)
    else:
        sampler = _gpirm_model(dims, hyper, degree_corrected=model == ModelTag.DCGPIRM)

    forward_rng, successive_rng = rng.substream(0), rng.substream(1)
    forward: Dict[str, List[float]] = {name: [] for name in sampler.statistics}
    successive: Dict[str, List[float]] = {name: [] for name in sampler.statistics}

    for _ in tqdm(range(n_samples), desc=f"geweke {model.value} forward", disable=not progress_enabled()):
        state = sampler.prior(forward_rng)
        _record(sampler, state, sampler.simulate(state, forward_rng), forward)

    state = sampler.prior(successive_rng)
    data = sampler.simulate(state, successive_rng)
    for _ in tqdm(range(n_samples), desc=f"geweke {model.value} successive", disable=not progress_enabled()):
        for _ in range(thin):
            state = sampler.sweep(state, data, successive_rng)
            data = sampler.simulate(state, successive_rng)
        _record(sampler, state, data, successive)

    result = GewekeResult(model=model, n_samples=n_samples)
    for name in sampler.statistics:
        f, s = np.asarray(forward[name]), np.asarray(successive[name])
        result.z_scores[name] = geweke_z(f, s)
        result.forward_means[name] = float(f.mean())
        result.successive_means[name] = float(s.mean())
    logger.info(
        f"Geweke {model.value}: max |z| = {result.max_abs_z():.3f} over {len(result.z_scores)} statistics"
    )
    return result
