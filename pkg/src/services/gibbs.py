"""
Gibbs Sampler Service
Token allocation, latent-source aggregation and conditional updates for BPTD

Allocation assigns every event token to a class z = (c, d, k, r) with probability
proportional to θ_ic θ_jd φ_ak ψ_tr λ[c, d, k, r]. Tokens are conditionally independent
given the parameters, so all tokens of a sweep are allocated with array operations.

Every update below modifies the state it is given in place and returns it; `gibbs_sweep`
copies the incoming state once so callers keep their own value.
"""
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Tuple

import numpy as np

from src.core.config import AllocationMode
from src.core.errors import NumericalError
from src.models.params import BPTDState, ModelDims
from src.models.results import AllocationCost, Assignments, LatentSources
from src.models.tensors import CountTensor, TokenArrays, all_dyads
from src.services.bptd_model import dyad_mass
from src.services.distributions import (
    RngStream,
    sample_categorical_rows,
    sample_crt_array,
    sample_gamma,
)

logger = logging.getLogger(__name__)

DEFAULT_JOINT_CHUNK = 4_000_000


@dataclass
class AllocationStats:
    """Instrumentation: categorical weights evaluated and tokens allocated"""
    weights_evaluated: int = 0
    tokens: int = 0

    def per_token(self) -> float:
        return self.weights_evaluated / self.tokens if self.tokens else 0.0


# ---------------------------------------------------------------------------
# Allocation
# ---------------------------------------------------------------------------


def allocation_cost(dims: ModelDims) -> AllocationCost:
    """Classes enumerated by joint allocation vs weights evaluated compositionally, per token"""
    c, k, r = dims.n_communities, dims.n_topics, dims.n_regimes
    joint = c * c * k * r
    compositional = 2 * c + k + r
    return AllocationCost(
        n_communities=c, n_topics=k, n_regimes=r,
        joint_classes=joint, compositional_weights=compositional, ratio=joint / compositional,
    )


def uniform_assignments(n_tokens: int, core_shape: Tuple[int, int, int, int], rng: RngStream) -> Assignments:
    c, _, k, r = core_shape
    gen = rng.generator
    return Assignments(
        gen.integers(0, c, n_tokens),
        gen.integers(0, c, n_tokens),
        gen.integers(0, k, n_tokens),
        gen.integers(0, r, n_tokens),
    )


def aggregate_sources(tokens: TokenArrays, assignments: Assignments, state_dims: ModelDims) -> LatentSources:
    """Count tokens per (entity, component) for each mode and per core cell"""
    v, a, t = state_dims.n_countries, state_dims.n_actions, state_dims.n_steps
    c, k, r = state_dims.n_communities, state_dims.n_topics, state_dims.n_regimes

    def table(rows: np.ndarray, cols: np.ndarray, n_rows: int, n_cols: int) -> np.ndarray:
        flat = np.bincount(rows * n_cols + cols, minlength=n_rows * n_cols)
        return flat.reshape(n_rows, n_cols).astype(np.int64)

    core_flat = np.ravel_multi_index((assignments.c, assignments.d, assignments.k, assignments.r), (c, c, k, r))
    return LatentSources(
        send=table(tokens.sender, assignments.c, v, c),
        recv=table(tokens.receiver, assignments.d, v, c),
        topic=table(tokens.action, assignments.k, a, k),
        regime=table(tokens.time, assignments.r, t, r),
        core_counts=np.bincount(core_flat, minlength=c * c * k * r).reshape(c, c, k, r).astype(np.int64),
    )


def _joint_block(
    state: BPTDState,
    tokens: TokenArrays,
    rng: RngStream,
    chunk_elements: int,
    stats: AllocationStats,
) -> Assignments:
    core_shape = state.core.shape
    n_classes = int(np.prod(core_shape))
    step = max(1, chunk_elements // n_classes)
    parts = []
    for start in range(0, len(tokens), step):
        blk = tokens.block(start, start + step)
        weights = np.einsum(
            "nc,nd,nk,nr,cdkr->ncdkr",
            state.theta[blk.sender], state.theta[blk.receiver],
            state.phi[blk.action], state.psi[blk.time], state.core,
        ).reshape(len(blk), n_classes)
        flat = sample_categorical_rows(weights, rng)
        parts.append(Assignments(*np.unravel_index(flat, core_shape)))
        stats.weights_evaluated += len(blk) * n_classes
    stats.tokens += len(tokens)
    if not parts:
        empty = np.zeros(0, dtype=np.int64)
        return Assignments(empty, empty.copy(), empty.copy(), empty.copy())
    return Assignments.concat(parts)


def _compositional_block(
    state: BPTDState,
    tokens: TokenArrays,
    current: Assignments,
    rng: RngStream,
    stats: AllocationStats,
) -> Assignments:
    lam = state.core
    z = current.copy()
    # c | d, k, r
    z.c = sample_categorical_rows(state.theta[tokens.sender] * lam[:, z.d, z.k, z.r].T, rng)
    # d | c, k, r
    z.d = sample_categorical_rows(state.theta[tokens.receiver] * lam[z.c, :, z.k, z.r], rng)
    # k | c, d, r
    z.k = sample_categorical_rows(state.phi[tokens.action] * lam[z.c, z.d, :, z.r], rng)
    # r | c, d, k
    z.r = sample_categorical_rows(state.psi[tokens.time] * lam[z.c, z.d, z.k, :], rng)
    c, _, k, r = lam.shape
    stats.weights_evaluated += len(tokens) * (2 * c + k + r)
    stats.tokens += len(tokens)
    return z


def _partition(n_tokens: int, workers: int) -> List[Tuple[int, int]]:
    """Contiguous token blocks, one per worker"""
    edges = np.linspace(0, n_tokens, workers + 1).astype(np.int64)
    return [(int(edges[w]), int(edges[w + 1])) for w in range(workers)]


def _run_blocks(
    fn: Callable[[int, int, RngStream, AllocationStats], Assignments],
    n_tokens: int,
    rng: RngStream,
    workers: int,
    stats: AllocationStats,
) -> Assignments:
    """
    Run `fn(lo, hi, stream, stats)` over contiguous token blocks

    With more than one worker every block draws from its own substream forked from `rng`,
    so results are reproducible for a fixed seed and worker count.
    """
    if workers <= 1 or n_tokens < 2 * workers:
        return fn(0, n_tokens, rng, stats)
    streams = rng.fork(workers)
    block_stats = [AllocationStats() for _ in range(workers)]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        futures = [
            pool.submit(fn, lo, hi, stream, part)
            for (lo, hi), stream, part in zip(_partition(n_tokens, workers), streams, block_stats)
        ]
        parts = [f.result() for f in futures]
    for part in block_stats:
        stats.weights_evaluated += part.weights_evaluated
        stats.tokens += part.tokens
    return Assignments.concat(parts)


def allocate_joint(
    state: BPTDState,
    tokens: TokenArrays,
    rng: RngStream,
    workers: int = 1,
    chunk_elements: int = DEFAULT_JOINT_CHUNK,
    stats: Optional[AllocationStats] = None,
) -> Tuple[Assignments, LatentSources]:
    """
    Exact draw of every token's class by enumerating all C·C·K·R classes

    Raises:
        NumericalError: a token whose class weights are all zero
    """
    stats = stats if stats is not None else AllocationStats()

    def run(lo: int, hi: int, stream: RngStream, block_stats: AllocationStats) -> Assignments:
        return _joint_block(state, tokens.block(lo, hi), stream, chunk_elements, block_stats)

    assignments = _run_blocks(run, len(tokens), rng, workers, stats)
    return assignments, aggregate_sources(tokens, assignments, state.dims())


def allocate_compositional(
    state: BPTDState,
    tokens: TokenArrays,
    assignments: Optional[Assignments],
    rng: RngStream,
    workers: int = 1,
    stats: Optional[AllocationStats] = None,
) -> Tuple[Assignments, LatentSources]:
    """
    Coordinate-wise re-allocation of every token: c, then d, then k, then r

    Each coordinate is drawn from its conditional given the token's other three, so one
    pass evaluates 2C + K + R weights per token and leaves the joint class distribution
    invariant. Without current assignments, tokens start from uniformly random classes.
    """
    stats = stats if stats is not None else AllocationStats()
    current = assignments if assignments is not None else uniform_assignments(len(tokens), state.core.shape, rng)

    def run(lo: int, hi: int, stream: RngStream, block_stats: AllocationStats) -> Assignments:
        return _compositional_block(state, tokens.block(lo, hi), current.block(lo, hi), stream, block_stats)

    updated = _run_blocks(run, len(tokens), rng, workers, stats)
    return updated, aggregate_sources(tokens, updated, state.dims())


def dyad_topic_counts(
    tokens: TokenArrays,
    assignments: Assignments,
    n_countries: int,
    topic: int,
    regime: int,
) -> np.ndarray:
    """V×V counts of tokens allocated to topic `topic` during regime `regime`"""
    keep = (assignments.k == topic) & (assignments.r == regime)
    flat = tokens.sender[keep] * n_countries + tokens.receiver[keep]
    return np.bincount(flat, minlength=n_countries * n_countries).reshape(n_countries, n_countries)


# ---------------------------------------------------------------------------
# Conditional updates
# ---------------------------------------------------------------------------


def _mode_sums(state: BPTDState) -> Tuple[np.ndarray, np.ndarray]:
    return state.phi.sum(axis=0), state.psi.sum(axis=0)


def country_exposure(state: BPTDState, i: int, pair_rate: np.ndarray, dyads: np.ndarray) -> np.ndarray:
    """
    S_i[c]: summed rate of country i's cells per unit θ_ic

    pair_rate[c, d] = Σ_kr λ[c, d, k, r] F_k P_r; the dyad weights exclude i's self-pair.
    """
    out_mass = state.theta.T @ dyads[i, :]
    in_mass = state.theta.T @ dyads[:, i]
    exposure = pair_rate @ out_mass + pair_rate.T @ in_mass
    if not np.all(np.isfinite(exposure)):
        raise NumericalError(f"non-finite exposure for country {i}")
    return exposure


def update_theta(
    state: BPTDState,
    sources: LatentSources,
    rng: RngStream,
    dyads: Optional[np.ndarray] = None,
    shape_offset: float = 0.0,
) -> BPTDState:
    """
    θ_i ~ Γ(α_i + send_i + recv_i, β_i + S_i), one country at a time

    `shape_offset` is added to every shape; anything but 0 gives a deliberately wrong
    sampler used to check that the Geweke harness detects errors.
    """
    w = all_dyads(state.theta.shape[0]) if dyads is None else dyads
    f, p = _mode_sums(state)
    pair_rate = np.einsum("cdkr,k,r->cd", state.core, f, p)
    m = sources.involvement
    for i in range(state.theta.shape[0]):
        exposure = country_exposure(state, i, pair_rate, w)
        state.theta[i] = sample_gamma(state.alpha[i] + m[i] + shape_offset, state.beta[i] + exposure, rng)
    return state


def update_beta(state: BPTDState, rng: RngStream) -> BPTDState:
    """β_i ~ Γ(ε₀ + C α_i, ε₀ + Σ_c θ_ic)"""
    eps0 = state.hyper.eps0
    n_comm = state.theta.shape[1]
    state.beta = sample_gamma(eps0 + n_comm * state.alpha, eps0 + state.theta.sum(axis=1), rng)
    return state


def update_alpha_beta(
    state: BPTDState,
    sources: LatentSources,
    rng: RngStream,
    dyads: Optional[np.ndarray] = None,
) -> BPTDState:
    """
    Country-level gamma shapes and rates

    β_i ~ Γ(ε₀ + C α_i, ε₀ + Σ_c θ_ic). Then, for each country, θ_i is integrated out so its
    counts are negative binomial: tables l_ic ~ CRT(m_ic, α_i),
    α_i ~ Γ(ε₀ + Σ_c l_ic, ε₀ + Σ_c log(1 + S_ic / β_i)), and θ_i is redrawn given the new α_i.
    """
    eps0 = state.hyper.eps0
    update_beta(state, rng)

    w = all_dyads(state.theta.shape[0]) if dyads is None else dyads
    f, p = _mode_sums(state)
    pair_rate = np.einsum("cdkr,k,r->cd", state.core, f, p)
    m = sources.involvement
    for i in range(state.theta.shape[0]):
        exposure = country_exposure(state, i, pair_rate, w)
        tables = sample_crt_array(m[i], state.alpha[i], rng)
        state.alpha[i] = sample_gamma(
            eps0 + tables.sum(), eps0 + np.log1p(exposure / state.beta[i]).sum(), rng,
        )
        state.theta[i] = sample_gamma(state.alpha[i] + m[i], state.beta[i] + exposure, rng)
    return state


def update_phi(
    state: BPTDState,
    sources: LatentSources,
    rng: RngStream,
    dyads: Optional[np.ndarray] = None,
) -> BPTDState:
    """φ_ak ~ Γ(ε₀ + topic[a, k], ε₀ + E_k), E_k = Σ_cdr λ X_cd P_r"""
    w = all_dyads(state.theta.shape[0]) if dyads is None else dyads
    x = dyad_mass(state.theta, w)
    p = state.psi.sum(axis=0)
    exposure = np.einsum("cdkr,cd,r->k", state.core, x, p)
    eps0 = state.hyper.eps0
    state.phi = sample_gamma(eps0 + sources.topic, eps0 + exposure[None, :], rng)
    return state


def update_psi(
    state: BPTDState,
    sources: LatentSources,
    rng: RngStream,
    dyads: Optional[np.ndarray] = None,
    rows: Optional[np.ndarray] = None,
) -> BPTDState:
    """
    ψ_tr ~ Γ(ε₀ + regime[t, r], ε₀ + G_r), G_r = Σ_cdk λ X_cd F_k

    `rows` restricts the update to a subset of time steps (the rest are left untouched).
    """
    w = all_dyads(state.theta.shape[0]) if dyads is None else dyads
    x = dyad_mass(state.theta, w)
    f = state.phi.sum(axis=0)
    exposure = np.einsum("cdkr,cd,k->r", state.core, x, f)
    eps0 = state.hyper.eps0
    if rows is None:
        state.psi = sample_gamma(eps0 + sources.regime, eps0 + exposure[None, :], rng)
    else:
        rows = np.asarray(rows, dtype=np.int64)
        state.psi[rows] = sample_gamma(eps0 + sources.regime[rows], eps0 + exposure[None, :], rng)
    return state


def core_exposure(state: BPTDState, dyads: np.ndarray) -> np.ndarray:
    """X_cd F_k P_r for every core cell"""
    x = dyad_mass(state.theta, dyads)
    f, p = _mode_sums(state)
    return np.einsum("cd,k,r->cdkr", x, f, p)


def update_core(
    state: BPTDState,
    sources: LatentSources,
    rng: RngStream,
    dyads: Optional[np.ndarray] = None,
) -> BPTDState:
    """λ ~ Γ(shape + core_counts, δ + X F P)"""
    w = all_dyads(state.theta.shape[0]) if dyads is None else dyads
    state.core = sample_gamma(state.core_shape() + sources.core_counts, state.delta + core_exposure(state, w), rng)
    return state


def update_weights(
    state: BPTDState,
    sources: LatentSources,
    rng: RngStream,
    dyads: Optional[np.ndarray] = None,
) -> BPTDState:
    """
    Community, topic and regime weights, then λ, δ and ζ

    With λ integrated out each core count is negative binomial with shape
    a_cd ν_k ρ_r. Tables l ~ CRT(core_counts, shape) make every weight conditionally gamma:
    its shape gains the tables of the cells it scales and its rate gains the remaining
    shape factors times q = log(1 + X F P / δ). η↔ is drawn one community at a time
    because diagonal and off-diagonal cells couple them. λ is redrawn from the new shapes
    before δ (unless fixed) and ζ (unless fixed).
    """
    hyper = state.hyper
    eps0, gamma0 = hyper.eps0, hyper.gamma0
    n_comm, _, n_topics, n_regimes = state.core.shape
    w = all_dyads(state.theta.shape[0]) if dyads is None else dyads
    base = core_exposure(state, w)
    q = np.log1p(base / state.delta)

    tables = sample_crt_array(sources.core_counts, state.core_shape(), rng)
    table_cd = tables.sum(axis=(2, 3))
    q_cd = np.einsum("cdkr,k,r->cd", q, state.nu, state.rho)

    diag_tables = np.diag(table_cd)
    diag_q = np.diag(q_cd)
    state.eta_within = sample_gamma(eps0 + diag_tables, eps0 + state.eta_between * diag_q, rng)

    off_tables = table_cd + table_cd.T
    off_q = q_cd + q_cd.T
    for c in range(n_comm):
        others = np.arange(n_comm) != c
        shape = gamma0 / n_comm + diag_tables[c] + off_tables[c, others].sum()
        rate = state.zeta + state.eta_within[c] * diag_q[c] + (state.eta_between[others] * off_q[c, others]).sum()
        state.eta_between[c] = sample_gamma(shape, rate, rng)

    pair = np.outer(state.eta_between, state.eta_between)
    np.fill_diagonal(pair, state.eta_within * state.eta_between)
    state.nu = sample_gamma(
        gamma0 / n_topics + tables.sum(axis=(0, 1, 3)),
        state.zeta + np.einsum("cd,r,cdkr->k", pair, state.rho, q),
        rng,
    )
    state.rho = sample_gamma(
        gamma0 / n_regimes + tables.sum(axis=(0, 1, 2)),
        state.zeta + np.einsum("cd,k,cdkr->r", pair, state.nu, q),
        rng,
    )

    shape = state.core_shape()
    state.core = sample_gamma(shape + sources.core_counts, state.delta + base, rng)
    update_delta(state, rng)
    update_zeta(state, rng)
    return state


def update_delta(state: BPTDState, rng: RngStream) -> BPTDState:
    """δ ~ Γ(ε₀ + Σ shape, ε₀ + Σ λ); a no-op when δ is fixed"""
    if state.hyper.fixed_delta is None:
        eps0 = state.hyper.eps0
        state.delta = float(sample_gamma(eps0 + state.core_shape().sum(), eps0 + state.core.sum(), rng))
    return state


def update_zeta(state: BPTDState, rng: RngStream) -> BPTDState:
    """ζ ~ Γ(ε₀ + 3γ₀, ε₀ + Σ η↔ + Σ ν + Σ ρ); a no-op when ζ is fixed"""
    if state.hyper.fixed_zeta is None:
        eps0, gamma0 = state.hyper.eps0, state.hyper.gamma0
        state.zeta = float(sample_gamma(
            eps0 + 3.0 * gamma0,
            eps0 + state.eta_between.sum() + state.nu.sum() + state.rho.sum(),
            rng,
        ))
    return state


# ---------------------------------------------------------------------------
# Sweeps
# ---------------------------------------------------------------------------


@dataclass
class SweepContext:
    """
    Per-chain allocation state carried between sweeps

    Holds the token view of the training tensor, the dyad weights used for exposures and
    the current assignments (needed by compositional allocation).
    """
    tokens: TokenArrays
    dyads: np.ndarray
    assignments: Optional[Assignments] = None
    sources: Optional[LatentSources] = None
    workers: int = 1
    chunk_elements: int = DEFAULT_JOINT_CHUNK
    theta_shape_offset: float = 0.0
    stats: AllocationStats = field(default_factory=AllocationStats)

    @classmethod
    def for_tensor(cls, tensor: CountTensor, dyads: Optional[np.ndarray] = None, **kwargs) -> "SweepContext":
        return cls(tokens=tensor.tokens(), dyads=all_dyads(tensor.dims[0]) if dyads is None else dyads, **kwargs)


def allocate(
    state: BPTDState,
    context: SweepContext,
    rng: RngStream,
    allocation: AllocationMode,
) -> LatentSources:
    """Allocate every token with the chosen scheme, storing assignments on the context"""
    if allocation == AllocationMode.JOINT:
        assignments, sources = allocate_joint(
            state, context.tokens, rng, context.workers, context.chunk_elements, context.stats,
        )
    else:
        assignments, sources = allocate_compositional(
            state, context.tokens, context.assignments, rng, context.workers, context.stats,
        )
    context.assignments = assignments
    context.sources = sources
    return sources


def update_parameters(
    state: BPTDState,
    sources: LatentSources,
    rng: RngStream,
    dyads: np.ndarray,
    theta_shape_offset: float = 0.0,
) -> BPTDState:
    """All conditional updates in the fixed scan order"""
    update_theta(state, sources, rng, dyads, shape_offset=theta_shape_offset)
    update_alpha_beta(state, sources, rng, dyads)
    update_phi(state, sources, rng, dyads)
    update_psi(state, sources, rng, dyads)
    update_core(state, sources, rng, dyads)
    update_weights(state, sources, rng, dyads)
    return state


def gibbs_sweep(
    state: BPTDState,
    tensor: Optional[CountTensor],
    rng: RngStream,
    allocation: AllocationMode = AllocationMode.COMPOSITIONAL,
    context: Optional[SweepContext] = None,
) -> BPTDState:
    """
    One full pass: allocation, aggregation, then θ, (α, β), φ, ψ, λ and the weights

    Pass a `SweepContext` to carry assignments across sweeps; without one, a context is
    built from `tensor` and compositional allocation starts from uniform classes.

    Returns:
        BPTDState: a new state; the input is not modified
    """
    if context is None:
        if tensor is None:
            raise ValueError("gibbs_sweep needs a tensor or a SweepContext")
        context = SweepContext.for_tensor(tensor)
    new_state = state.copy()
    sources = allocate(new_state, context, rng, allocation)
    update_parameters(new_state, sources, rng, context.dyads, context.theta_shape_offset)
    return new_state.validate()
