"""
BPTD Model Service
Generative process, Poisson rates and summaries of a Tucker-structured state

A state's rate for cell (i, j, a, t) with i ≠ j is
    μ = Σ_c Σ_d Σ_k Σ_r θ_ic θ_jd φ_ak ψ_tr λ[c, d, k, r]
Sums of rates over sets of cells are computed through a V×V dyad-weight matrix W (1 for
every dyad that counts, 0 otherwise) so the i ≠ j exclusion and held-out masks share one
code path:
    Σ_{ij} W_ij Σ_at μ_ijat = Σ_cdkr λ[c, d, k, r] X[c, d] F[k] P[r]
with X = Θᵀ W Θ, F = column sums of Φ, P = column sums of Ψ.
"""
import logging
from typing import Optional, Sequence, Tuple, Union

import numpy as np
from scipy.special import gammaln

from src.core.errors import DataError, ParameterError
from src.models.params import BPTDState, Hyperparams, ModelDims, TuckerLike
from src.models.tensors import CountTensor, all_dyads
from src.services.distributions import RngStream, sample_gamma, sample_poisson

logger = logging.getLogger(__name__)

DEFAULT_RATE_CHUNK = 1_000_000


def sample_prior(dims: ModelDims, hyper: Hyperparams, rng: RngStream) -> BPTDState:
    """
    Draw a complete state from the hierarchical gamma priors

    ζ and δ are drawn (or taken from the fixed values) before the weights and core that
    depend on them.
    """
    v, a, t = dims.n_countries, dims.n_actions, dims.n_steps
    c, k, r = dims.n_communities, dims.n_topics, dims.n_regimes
    eps0, gamma0 = hyper.eps0, hyper.gamma0

    alpha = sample_gamma(eps0, eps0, rng, size=v)
    beta = sample_gamma(eps0, eps0, rng, size=v)
    theta = sample_gamma(alpha[:, None], beta[:, None], rng, size=(v, c))
    phi = sample_gamma(eps0, eps0, rng, size=(a, k))
    psi = sample_gamma(eps0, eps0, rng, size=(t, r))
    delta = hyper.fixed_delta if hyper.fixed_delta is not None else sample_gamma(eps0, eps0, rng)
    zeta = hyper.fixed_zeta if hyper.fixed_zeta is not None else sample_gamma(eps0, eps0, rng)
    eta_within = sample_gamma(eps0, eps0, rng, size=c)
    eta_between = sample_gamma(gamma0 / c, zeta, rng, size=c)
    nu = sample_gamma(gamma0 / k, zeta, rng, size=k)
    rho = sample_gamma(gamma0 / r, zeta, rng, size=r)

    state = BPTDState(
        theta=theta, phi=phi, psi=psi, core=np.empty(dims.core_shape),
        eta_within=eta_within, eta_between=eta_between, nu=nu, rho=rho,
        delta=float(delta), zeta=float(zeta), alpha=alpha, beta=beta, hyper=hyper,
    )
    state.core = sample_gamma(state.core_shape(), state.delta, rng)
    return state


def _check_cell(state: TuckerLike, i: int, j: int, a: int, t: int) -> None:
    v = state.theta.shape[0]
    if not (0 <= i < v and 0 <= j < v and 0 <= a < state.phi.shape[0] and 0 <= t < state.psi.shape[0]):
        raise DataError(f"cell ({i}, {j}, {a}, {t}) outside the state's dims")
    if i == j:
        raise DataError("rates are defined only for sender ≠ receiver")


def poisson_rate(state: TuckerLike, i: int, j: int, a: int, t: int) -> float:
    """Rate of cell (i, j, a, t)"""
    _check_cell(state, i, j, a, t)
    return float(np.einsum(
        "c,d,k,r,cdkr->", state.theta[i], state.theta[j], state.phi[a], state.psi[t], state.core,
    ))


def entry_rates(state: TuckerLike, subs: np.ndarray, chunk_elements: int = DEFAULT_RATE_CHUNK) -> np.ndarray:
    """
    Rates of many cells given as an (n, 4) index array

    Cells are processed in chunks whose intermediate arrays hold at most about
    `chunk_elements` floats.
    """
    subs = np.asarray(subs, dtype=np.int64).reshape(-1, 4)
    c, _, k, r = state.core.shape
    step = max(1, chunk_elements // (c * k * r))
    out = np.empty(subs.shape[0])
    for start in range(0, subs.shape[0], step):
        s = subs[start:start + step]
        partial = np.einsum("nc,cdkr->ndkr", state.theta[s[:, 0]], state.core)
        partial = np.einsum("ndkr,nd->nkr", partial, state.theta[s[:, 1]])
        out[start:start + step] = np.einsum("nkr,nk,nr->n", partial, state.phi[s[:, 2]], state.psi[s[:, 3]])
    return out


def rates_dense(state: TuckerLike, dyads: Optional[np.ndarray] = None) -> np.ndarray:
    """Full V×V×A×T rate array with excluded dyads zeroed; small dims only"""
    v = state.theta.shape[0]
    w = all_dyads(v) if dyads is None else dyads
    rates = np.einsum(
        "ic,jd,ak,tr,cdkr->ijat", state.theta, state.theta, state.phi, state.psi, state.core,
        optimize=True,
    )
    return rates * w[:, :, None, None]


def dyad_mass(theta: np.ndarray, dyads: np.ndarray) -> np.ndarray:
    """X[c, d] = Σ_ij W_ij θ_ic θ_jd"""
    return theta.T @ dyads @ theta


def total_rate(
    state: TuckerLike,
    dyads: Optional[np.ndarray] = None,
    time_steps: Optional[Sequence[int]] = None,
) -> float:
    """Sum of rates over the selected dyads, all actions and the given (default all) steps"""
    w = all_dyads(state.theta.shape[0]) if dyads is None else dyads
    psi = state.psi if time_steps is None else state.psi[np.asarray(time_steps, dtype=np.int64)]
    x = dyad_mass(state.theta, w)
    return float(np.einsum("cdkr,cd,k,r->", state.core, x, state.phi.sum(axis=0), psi.sum(axis=0)))


def _as_n_communities(dims: Union[ModelDims, int]) -> int:
    return dims.n_communities if isinstance(dims, ModelDims) else int(dims)


def expected_core_sum(gamma0: float, zeta: float, delta: float, dims: Union[ModelDims, int]) -> float:
    """
    E[Σ λ] under the prior with γ₀, ζ, δ held fixed at C communities

    (1/δ)(γ₀³/ζ³ + ((C−1)/C)·γ₀⁴/ζ⁴); independent of K, R and ε₀.
    """
    n_comm = _as_n_communities(dims)
    if min(gamma0, zeta, delta) <= 0 or n_comm < 1:
        raise ParameterError("expected_core_sum needs positive arguments")
    ratio = gamma0 / zeta
    return (ratio ** 3 + (n_comm - 1) / n_comm * ratio ** 4) / delta


def expected_core_sum_limit(gamma0: float, zeta: float, delta: float) -> float:
    """C → ∞ limit of `expected_core_sum`"""
    if min(gamma0, zeta, delta) <= 0:
        raise ParameterError("expected_core_sum_limit needs positive arguments")
    ratio = gamma0 / zeta
    return (ratio ** 3 + ratio ** 4) / delta


def core_sum_draws(dims: ModelDims, hyper: Hyperparams, n_draws: int, rng: RngStream) -> np.ndarray:
    """
    Prior draws of Σ λ with γ₀, ζ, δ held at fixed values

    ζ and δ come from `hyper.fixed_zeta` / `hyper.fixed_delta`. The weights are drawn for
    every replicate at once; given them, Σ λ is a single Γ(Σ shape, δ) draw.
    """
    if hyper.fixed_zeta is None or hyper.fixed_delta is None:
        raise ParameterError("core_sum_draws needs fixed_zeta and fixed_delta")
    c, k, r = dims.n_communities, dims.n_topics, dims.n_regimes
    zeta, delta = hyper.fixed_zeta, hyper.fixed_delta
    eta_w = sample_gamma(hyper.eps0, hyper.eps0, rng, size=(n_draws, c))
    eta_b = sample_gamma(hyper.gamma0 / c, zeta, rng, size=(n_draws, c))
    nu = sample_gamma(hyper.gamma0 / k, zeta, rng, size=(n_draws, k))
    rho = sample_gamma(hyper.gamma0 / r, zeta, rng, size=(n_draws, r))
    pairs = (eta_w * eta_b).sum(axis=1) + eta_b.sum(axis=1) ** 2 - (eta_b ** 2).sum(axis=1)
    shape_total = pairs * nu.sum(axis=1) * rho.sum(axis=1)
    return sample_gamma(shape_total, delta, rng)


def simulate(
    state: TuckerLike,
    dims: Optional[ModelDims],
    rng: RngStream,
    dyads: Optional[np.ndarray] = None,
) -> CountTensor:
    """
    Draw y_ijat ~ Po(μ_ijat) for every selected dyad, action and step

    The state may contain zero entries (embedded or zero-clamped factors); such cells
    simply have rate 0. Rates are formed one time step at a time.
    """
    v, a, t = state.theta.shape[0], state.phi.shape[0], state.psi.shape[0]
    if dims is not None and (dims.n_countries, dims.n_actions, dims.n_steps) != (v, a, t):
        raise DataError(f"state shape {(v, a, t)} does not match dims {dims.tensor_shape}")
    w = all_dyads(v) if dyads is None else dyads
    pair_core = np.einsum("ic,jd,cdkr->ijkr", state.theta, state.theta, state.core, optimize=True)
    pair_core *= w[:, :, None, None]
    subs, counts = [], []
    for step in range(t):
        rates = np.einsum("ijkr,ak,r->ija", pair_core, state.phi, state.psi[step], optimize=True)
        draw = sample_poisson(np.maximum(rates, 0.0), rng)
        nz = np.argwhere(draw > 0)
        if nz.shape[0]:
            subs.append(np.column_stack([nz, np.full(nz.shape[0], step)]))
            counts.append(draw[tuple(nz.T)])
    if not subs:
        return CountTensor.empty((v, v, a, t))
    return CountTensor.from_arrays((v, v, a, t), np.concatenate(subs), np.concatenate(counts))


def effective_dims(state: BPTDState, threshold_fraction: float = 0.05) -> Tuple[int, int, int]:
    """Number of communities, topics and regimes whose weight exceeds a fraction of the largest"""
    if not 0 < threshold_fraction < 1:
        raise ParameterError("threshold_fraction must lie in (0, 1)")

    def active(weights: np.ndarray) -> int:
        return int(np.sum(weights > threshold_fraction * weights.max()))

    return active(state.eta_between), active(state.nu), active(state.rho)


def log_likelihood(state: TuckerLike, tensor: CountTensor, dyads: Optional[np.ndarray] = None) -> float:
    """
    Poisson log-likelihood of every selected cell, zeros included

    Σ_nonzero (y log μ − log y!) − Σ_all μ
    """
    ll = -total_rate(state, dyads)
    if tensor.nnz:
        rates = entry_rates(state, tensor.subs)
        y = tensor.counts.astype(np.float64)
        with np.errstate(divide="ignore"):
            ll += float(np.sum(y * np.log(rates) - gammaln(y + 1.0)))
    return ll


def community_networks(state: BPTDState, regime: int) -> np.ndarray:
    """K×C×C stack: entry [k, c, d] is the rate from community c to d on topic k in `regime`"""
    if not 0 <= regime < state.core.shape[3]:
        raise DataError(f"regime {regime} out of range")
    return np.transpose(state.core[:, :, :, regime], (2, 0, 1)).copy()


def role_rates(
    state: BPTDState,
    topic: int,
    regime: int,
    dyads: Optional[np.ndarray] = None,
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Per-country, per-community sending and receiving rates for one topic and regime

    send[i, c] = θ_ic Σ_j W_ij Σ_d θ_jd λ[c, d, k, r]
    recv[j, d] = θ_jd Σ_i W_ij Σ_c θ_ic λ[c, d, k, r]
    """
    if not (0 <= topic < state.core.shape[2] and 0 <= regime < state.core.shape[3]):
        raise DataError(f"topic {topic} / regime {regime} out of range")
    w = all_dyads(state.theta.shape[0]) if dyads is None else dyads
    lam = state.core[:, :, topic, regime]
    send = state.theta * ((w @ state.theta) @ lam.T)
    recv = state.theta * ((w.T @ state.theta) @ lam)
    return send, recv


def planted_state(
    dims: ModelDims,
    rng: RngStream,
    n_active_communities: int = 3,
    n_active_topics: int = 2,
    n_active_regimes: int = 1,
    total_events: float = 50_000.0,
    hyper: Optional[Hyperparams] = None,
) -> BPTDState:
    """
    Block-structured state with well-separated planted communities

    Countries are split evenly across the active communities with a small amount of
    cross-membership; actions across active topics; steps across active regimes. Inactive
    components carry near-zero weight. The core is scaled so the expected token total
    equals `total_events`.
    """
    v, a, t = dims.n_countries, dims.n_actions, dims.n_steps
    c, k, r = dims.n_communities, dims.n_topics, dims.n_regimes
    if not (1 <= n_active_communities <= min(c, v) and 1 <= n_active_topics <= min(k, a)
            and 1 <= n_active_regimes <= min(r, t)):
        raise ParameterError("active components must fit within dims")
    floor = 1e-3

    def blocks(n_items: int, n_groups: int, n_cols: int, jitter: float) -> np.ndarray:
        out = np.full((n_items, n_cols), floor)
        groups = np.arange(n_items) % n_groups
        out[np.arange(n_items), groups] = 1.0 + jitter * rng.uniform(n_items)
        return out

    theta = blocks(v, n_active_communities, c, 0.5)
    phi = blocks(a, n_active_topics, k, 0.5)
    psi = blocks(t, n_active_regimes, r, 0.2)

    core = np.full(dims.core_shape, floor)
    for kk in range(n_active_topics):
        for rr in range(n_active_regimes):
            block = np.full((n_active_communities, n_active_communities), 0.05)
            np.fill_diagonal(block, 1.0)
            # each topic also carries one directed off-diagonal interaction
            block[kk % n_active_communities, (kk + 1) % n_active_communities] = 0.6
            core[:n_active_communities, :n_active_communities, kk, rr] = block

    def weights(n: int, n_active: int) -> np.ndarray:
        w = np.full(n, floor)
        w[:n_active] = 1.0
        return w

    state = BPTDState(
        theta=theta, phi=phi, psi=psi, core=core,
        eta_within=weights(c, n_active_communities), eta_between=weights(c, n_active_communities),
        nu=weights(k, n_active_topics), rho=weights(r, n_active_regimes),
        delta=1.0, zeta=1.0, alpha=np.ones(v), beta=np.ones(v), hyper=hyper or Hyperparams(),
    )
    state.core *= total_events / total_rate(state)
    logger.info(
        f"Planted state: {n_active_communities} communities, {n_active_topics} topics, "
        f"{n_active_regimes} regimes, expected {total_events:.0f} events"
    )
    return state.validate()
