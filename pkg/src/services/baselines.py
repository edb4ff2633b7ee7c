"""
Baseline Models Service
Comparison models sharing the BPTD allocation and conjugate-update machinery

- BPTF: Poisson CP decomposition with a shrinkage weight per class,
  μ_ijat = Σ_q θ→_iq θ←_jq φ_aq ψ_tq λ_q
- GPIRM: every country, action and time step belongs to exactly one group,
  μ_ijat = λ[z_i, z_j, z_a, z_t]
- DCGPIRM: GPIRM with a positive degree scalar per entity,
  μ_ijat = θ_i θ_j φ_a ψ_t λ[z_i, z_j, z_a, z_t]
"""
import logging
import math
from collections import OrderedDict
from dataclasses import dataclass, field, replace
from typing import Dict, Optional, Tuple

import numpy as np

from src.core.errors import NumericalError
from src.models.params import BPTDState, Hyperparams, ModelDims, TuckerFactors
from src.models.tensors import CountTensor, TokenArrays, all_dyads
from src.services.distributions import RngStream, sample_categorical_rows, sample_gamma

logger = logging.getLogger(__name__)


def bptf_q_for_parity(v: int, a: int, t: int, c: int, k: int, r: int) -> int:
    """
    Number of CP classes whose likelihood has as many latent factors as BPTD's

    Q = ⌈(V·C + A·K + T·R + C²·K·R) / (V + V + A + T + 1)⌉
    """
    tucker_params = v * c + a * k + t * r + c * c * k * r
    return math.ceil(tucker_params / (2 * v + a + t + 1))


# ---------------------------------------------------------------------------
# BPTF
# ---------------------------------------------------------------------------


@dataclass
class BPTFState:
    """CP factors (V×Q sender, V×Q receiver, A×Q, T×Q), class weights λ_q and their rate ζ"""
    theta_send: np.ndarray
    theta_recv: np.ndarray
    phi: np.ndarray
    psi: np.ndarray
    lambda_q: np.ndarray
    zeta: float
    hyper: Hyperparams = field(default_factory=Hyperparams)

    ARRAY_ORDER = ("theta_send", "theta_recv", "phi", "psi", "lambda_q")

    @property
    def n_classes(self) -> int:
        return int(self.lambda_q.shape[0])

    def copy(self) -> "BPTFState":
        return replace(self, **{name: getattr(self, name).copy() for name in self.ARRAY_ORDER})

    def validate(self) -> "BPTFState":
        for name in self.ARRAY_ORDER:
            arr = getattr(self, name)
            if not np.all(np.isfinite(arr)) or np.any(arr <= 0):
                raise NumericalError(f"BPTF field {name} is not strictly positive and finite")
        return self

    def to_arrays(self) -> "OrderedDict[str, np.ndarray]":
        out: "OrderedDict[str, np.ndarray]" = OrderedDict((n, getattr(self, n)) for n in self.ARRAY_ORDER)
        out["scalars"] = np.array([self.zeta])
        out["hyper"] = _hyper_array(self.hyper)
        return out

    @classmethod
    def from_arrays(cls, arrays: Dict[str, np.ndarray]) -> "BPTFState":
        return cls(
            **{n: np.array(arrays[n], dtype=np.float64) for n in cls.ARRAY_ORDER},
            zeta=float(arrays["scalars"][0]),
            hyper=_hyper_from_array(arrays["hyper"]),
        )


def _hyper_array(hyper: Hyperparams) -> np.ndarray:
    return np.array([
        hyper.eps0, hyper.gamma0,
        np.nan if hyper.fixed_delta is None else hyper.fixed_delta,
        np.nan if hyper.fixed_zeta is None else hyper.fixed_zeta,
    ])


def _hyper_from_array(values: np.ndarray) -> Hyperparams:
    eps0, gamma0, fixed_delta, fixed_zeta = values
    return Hyperparams(
        eps0=float(eps0), gamma0=float(gamma0),
        fixed_delta=None if np.isnan(fixed_delta) else float(fixed_delta),
        fixed_zeta=None if np.isnan(fixed_zeta) else float(fixed_zeta),
    )


def bptf_prior(
    n_countries: int,
    n_actions: int,
    n_steps: int,
    n_classes: int,
    hyper: Hyperparams,
    rng: RngStream,
) -> BPTFState:
    eps0 = hyper.eps0
    zeta = hyper.fixed_zeta if hyper.fixed_zeta is not None else sample_gamma(eps0, eps0, rng)
    return BPTFState(
        theta_send=sample_gamma(eps0, eps0, rng, size=(n_countries, n_classes)),
        theta_recv=sample_gamma(eps0, eps0, rng, size=(n_countries, n_classes)),
        phi=sample_gamma(eps0, eps0, rng, size=(n_actions, n_classes)),
        psi=sample_gamma(eps0, eps0, rng, size=(n_steps, n_classes)),
        lambda_q=sample_gamma(hyper.gamma0 / n_classes, zeta, rng, size=n_classes),
        zeta=float(zeta),
        hyper=hyper,
    )


def bptf_from_tucker(state: BPTDState) -> BPTFState:
    """
    CP expansion of a Tucker state with one class per core cell (Q = C²KR)

    Rates of the expansion equal the Tucker rates for every cell.
    """
    c, _, k, r = state.core.shape
    cc, dd, kk, rr = (idx.reshape(-1) for idx in np.indices((c, c, k, r)))
    return BPTFState(
        theta_send=state.theta[:, cc].copy(),
        theta_recv=state.theta[:, dd].copy(),
        phi=state.phi[:, kk].copy(),
        psi=state.psi[:, rr].copy(),
        lambda_q=state.core.reshape(-1).copy(),
        zeta=state.zeta,
        hyper=state.hyper,
    )


def bptf_entry_rates(state: BPTFState, subs: np.ndarray) -> np.ndarray:
    subs = np.asarray(subs, dtype=np.int64).reshape(-1, 4)
    return np.einsum(
        "nq,nq,nq,nq,q->n",
        state.theta_send[subs[:, 0]], state.theta_recv[subs[:, 1]],
        state.phi[subs[:, 2]], state.psi[subs[:, 3]], state.lambda_q,
    )


def bptf_class_mass(state: BPTFState, dyads: np.ndarray) -> np.ndarray:
    """X_q = Σ_ij W_ij θ→_iq θ←_jq"""
    return np.einsum("iq,ij,jq->q", state.theta_send, dyads, state.theta_recv)


def bptf_total_rate(state: BPTFState, dyads: Optional[np.ndarray] = None) -> float:
    w = all_dyads(state.theta_send.shape[0]) if dyads is None else dyads
    return float(np.sum(state.lambda_q * bptf_class_mass(state, w) * state.phi.sum(axis=0) * state.psi.sum(axis=0)))


@dataclass
class BPTFSources:
    send: np.ndarray
    recv: np.ndarray
    topic: np.ndarray
    regime: np.ndarray
    classes: np.ndarray


def bptf_allocate(state: BPTFState, tokens: TokenArrays, rng: RngStream) -> BPTFSources:
    """Draw every token's class q ∝ θ→_iq θ←_jq φ_aq ψ_tq λ_q and count per mode"""
    q = state.n_classes
    if len(tokens):
        weights = (
            state.theta_send[tokens.sender] * state.theta_recv[tokens.receiver]
            * state.phi[tokens.action] * state.psi[tokens.time] * state.lambda_q[None, :]
        )
        z = sample_categorical_rows(weights, rng)
    else:
        z = np.zeros(0, dtype=np.int64)

    def table(rows: np.ndarray, n_rows: int) -> np.ndarray:
        return np.bincount(rows * q + z, minlength=n_rows * q).reshape(n_rows, q).astype(np.int64)

    return BPTFSources(
        send=table(tokens.sender, state.theta_send.shape[0]),
        recv=table(tokens.receiver, state.theta_recv.shape[0]),
        topic=table(tokens.action, state.phi.shape[0]),
        regime=table(tokens.time, state.psi.shape[0]),
        classes=np.bincount(z, minlength=q).astype(np.int64),
    )


def bptf_update_time(
    state: BPTFState,
    sources: BPTFSources,
    rng: RngStream,
    dyads: np.ndarray,
) -> BPTFState:
    """ψ_tq ~ Γ(ε₀ + regime[t, q], ε₀ + λ_q X_q F_q)"""
    eps0 = state.hyper.eps0
    exposure = state.lambda_q * bptf_class_mass(state, dyads) * state.phi.sum(axis=0)
    state.psi = sample_gamma(eps0 + sources.regime, eps0 + exposure[None, :], rng)
    return state


def bptf_sweep(
    state: BPTFState,
    tensor: Optional[CountTensor],
    rng: RngStream,
    dyads: Optional[np.ndarray] = None,
    tokens: Optional[TokenArrays] = None,
) -> BPTFState:
    """
    One pass: non-compositional allocation, then θ→, θ←, φ, ψ, λ and ζ

    Returns:
        BPTFState: a new state; the input is not modified
    """
    state = state.copy()
    toks = tokens if tokens is not None else tensor.tokens()
    w = all_dyads(state.theta_send.shape[0]) if dyads is None else dyads
    eps0, gamma0 = state.hyper.eps0, state.hyper.gamma0
    src = bptf_allocate(state, toks, rng)

    def mode_sums():
        return state.phi.sum(axis=0), state.psi.sum(axis=0)

    f, p = mode_sums()
    state.theta_send = sample_gamma(
        eps0 + src.send, eps0 + (state.lambda_q * f * p)[None, :] * (w @ state.theta_recv), rng,
    )
    state.theta_recv = sample_gamma(
        eps0 + src.recv, eps0 + (state.lambda_q * f * p)[None, :] * (w.T @ state.theta_send), rng,
    )
    mass = bptf_class_mass(state, w)
    state.phi = sample_gamma(eps0 + src.topic, eps0 + (state.lambda_q * mass * p)[None, :], rng)
    bptf_update_time(state, src, rng, w)
    f, p = mode_sums()
    state.lambda_q = sample_gamma(gamma0 / state.n_classes + src.classes, state.zeta + mass * f * p, rng)
    if state.hyper.fixed_zeta is None:
        state.zeta = sample_gamma(eps0 + gamma0, eps0 + state.lambda_q.sum(), rng)
    return state.validate()


# ---------------------------------------------------------------------------
# GPIRM / DCGPIRM
# ---------------------------------------------------------------------------


@dataclass
class GPIRMState:
    """
    Single-membership assignments with a gamma core

    Without degree correction the degree arrays stay at 1.
    """
    z_country: np.ndarray
    z_action: np.ndarray
    z_time: np.ndarray
    core: np.ndarray
    theta_deg: np.ndarray
    phi_deg: np.ndarray
    psi_deg: np.ndarray
    degree_corrected: bool = False
    hyper: Hyperparams = field(default_factory=Hyperparams)

    ARRAY_ORDER = ("z_country", "z_action", "z_time", "core", "theta_deg", "phi_deg", "psi_deg")

    @property
    def core_shape(self) -> Tuple[int, int, int, int]:
        return tuple(self.core.shape)

    def copy(self) -> "GPIRMState":
        return replace(self, **{name: getattr(self, name).copy() for name in self.ARRAY_ORDER})

    def embed(self) -> TuckerFactors:
        """One-hot factors scaled by the degrees, so Tucker rates equal GPIRM rates"""
        c, _, k, r = self.core.shape
        return TuckerFactors(
            theta=np.eye(c)[self.z_country] * self.theta_deg[:, None],
            phi=np.eye(k)[self.z_action] * self.phi_deg[:, None],
            psi=np.eye(r)[self.z_time] * self.psi_deg[:, None],
            core=self.core,
        )

    def validate(self) -> "GPIRMState":
        c, _, k, r = self.core.shape
        for z, n in ((self.z_country, c), (self.z_action, k), (self.z_time, r)):
            if np.any(z < 0) or np.any(z >= n):
                raise NumericalError("GPIRM assignment out of range")
        for name in ("core", "theta_deg", "phi_deg", "psi_deg"):
            arr = getattr(self, name)
            if not np.all(np.isfinite(arr)) or np.any(arr <= 0):
                raise NumericalError(f"GPIRM field {name} is not strictly positive and finite")
        return self

    def to_arrays(self) -> "OrderedDict[str, np.ndarray]":
        out: "OrderedDict[str, np.ndarray]" = OrderedDict(
            (n, np.asarray(getattr(self, n), dtype=np.float64)) for n in self.ARRAY_ORDER
        )
        out["flags"] = np.array([1.0 if self.degree_corrected else 0.0])
        out["hyper"] = _hyper_array(self.hyper)
        return out

    @classmethod
    def from_arrays(cls, arrays: Dict[str, np.ndarray]) -> "GPIRMState":
        return cls(
            z_country=np.asarray(arrays["z_country"]).astype(np.int64),
            z_action=np.asarray(arrays["z_action"]).astype(np.int64),
            z_time=np.asarray(arrays["z_time"]).astype(np.int64),
            core=np.array(arrays["core"], dtype=np.float64),
            theta_deg=np.array(arrays["theta_deg"], dtype=np.float64),
            phi_deg=np.array(arrays["phi_deg"], dtype=np.float64),
            psi_deg=np.array(arrays["psi_deg"], dtype=np.float64),
            degree_corrected=bool(arrays["flags"][0]),
            hyper=_hyper_from_array(arrays["hyper"]),
        )


def gpirm_prior(dims: ModelDims, hyper: Hyperparams, rng: RngStream, degree_corrected: bool = False) -> GPIRMState:
    """Uniform assignments, Γ(ε₀, ε₀) core cells and (with degree correction) degrees"""
    gen = rng.generator
    eps0 = hyper.eps0
    v, a, t = dims.n_countries, dims.n_actions, dims.n_steps

    def degrees(n: int) -> np.ndarray:
        return sample_gamma(eps0, eps0, rng, size=n) if degree_corrected else np.ones(n)

    z_country = gen.integers(0, dims.n_communities, v)
    z_action = gen.integers(0, dims.n_topics, a)
    z_time = gen.integers(0, dims.n_regimes, t)
    core = sample_gamma(eps0, eps0, rng, size=dims.core_shape)
    return GPIRMState(
        z_country=z_country, z_action=z_action, z_time=z_time, core=core,
        theta_deg=degrees(v), phi_deg=degrees(a), psi_deg=degrees(t),
        degree_corrected=degree_corrected, hyper=hyper,
    )


def gpirm_entry_rates(state: GPIRMState, subs: np.ndarray) -> np.ndarray:
    subs = np.asarray(subs, dtype=np.int64).reshape(-1, 4)
    i, j, a, t = subs.T
    lam = state.core[state.z_country[i], state.z_country[j], state.z_action[a], state.z_time[t]]
    return state.theta_deg[i] * state.theta_deg[j] * state.phi_deg[a] * state.psi_deg[t] * lam


def _group_mass(z: np.ndarray, weights: np.ndarray, n_groups: int) -> np.ndarray:
    return np.bincount(z, weights=weights, minlength=n_groups)


def _sample_log_rows(log_weights: np.ndarray, rng: RngStream) -> np.ndarray:
    shifted = np.exp(log_weights - log_weights.max(axis=1, keepdims=True))
    return sample_categorical_rows(shifted, rng)


class _EntryIndex:
    """Nonzero entries grouped by sender, receiver, action and time"""

    def __init__(self, tensor: CountTensor):
        self.subs = tensor.subs
        self.y = tensor.counts.astype(np.float64)
        v = tensor.dims[0]
        self.by_sender = self._group(self.subs[:, 0], v)
        self.by_receiver = self._group(self.subs[:, 1], v)

    @staticmethod
    def _group(keys: np.ndarray, n: int):
        order = np.argsort(keys, kind="stable")
        bounds = np.searchsorted(keys[order], np.arange(n + 1))
        return [order[bounds[x]:bounds[x + 1]] for x in range(n)]


def _update_country_assignments(state: GPIRMState, index: _EntryIndex, w: np.ndarray, rng: RngStream) -> None:
    c_n = state.core.shape[0]
    lam, log_lam = state.core, np.log(state.core)
    f_group = _group_mass(state.z_action, state.phi_deg, state.core.shape[2])
    p_group = _group_mass(state.z_time, state.psi_deg, state.core.shape[3])
    pair_rate = np.einsum("cdkr,k,r->cd", lam, f_group, p_group)
    subs, y = index.subs, index.y
    for i in range(state.z_country.shape[0]):
        out_mass = _group_mass(state.z_country, w[i, :] * state.theta_deg, c_n)
        in_mass = _group_mass(state.z_country, w[:, i] * state.theta_deg, c_n)
        exposure = state.theta_deg[i] * (pair_rate @ out_mass + pair_rate.T @ in_mass)

        data = np.zeros(c_n)
        sent = index.by_sender[i]
        if sent.size:
            e = subs[sent]
            data += (y[sent, None] * log_lam[:, state.z_country[e[:, 1]], state.z_action[e[:, 2]], state.z_time[e[:, 3]]].T).sum(axis=0)
        received = index.by_receiver[i]
        if received.size:
            e = subs[received]
            data += (y[received, None] * log_lam[state.z_country[e[:, 0]], :, state.z_action[e[:, 2]], state.z_time[e[:, 3]]]).sum(axis=0)
        state.z_country[i] = _sample_log_rows((data - exposure)[None, :], rng)[0]


def _mode_data_terms(
    state: GPIRMState,
    index: _EntryIndex,
    mode: int,
    n_entities: int,
) -> np.ndarray:
    """Σ y log λ over entries of each entity, for every candidate group of that mode"""
    subs, y = index.subs, index.y
    log_lam = np.log(state.core)
    zc_i, zc_j = state.z_country[subs[:, 0]], state.z_country[subs[:, 1]]
    if mode == 2:
        per_entry = log_lam[zc_i, zc_j, :, state.z_time[subs[:, 3]]]
    else:
        per_entry = log_lam[zc_i, zc_j, state.z_action[subs[:, 2]], :]
    out = np.zeros((n_entities, per_entry.shape[1]))
    np.add.at(out, subs[:, mode], y[:, None] * per_entry)
    return out


def _community_pair_mass(state: GPIRMState, w: np.ndarray) -> np.ndarray:
    emb = np.eye(state.core.shape[0])[state.z_country] * state.theta_deg[:, None]
    return emb.T @ w @ emb


def _update_action_assignments(state: GPIRMState, index: _EntryIndex, w: np.ndarray, rng: RngStream) -> None:
    x = _community_pair_mass(state, w)
    p_group = _group_mass(state.z_time, state.psi_deg, state.core.shape[3])
    per_group = np.einsum("cdkr,cd,r->k", state.core, x, p_group)
    data = _mode_data_terms(state, index, 2, state.z_action.shape[0])
    state.z_action = _sample_log_rows(data - state.phi_deg[:, None] * per_group[None, :], rng)


def _update_time_assignments(state: GPIRMState, index: _EntryIndex, w: np.ndarray, rng: RngStream) -> None:
    x = _community_pair_mass(state, w)
    f_group = _group_mass(state.z_action, state.phi_deg, state.core.shape[2])
    per_group = np.einsum("cdkr,cd,k->r", state.core, x, f_group)
    data = _mode_data_terms(state, index, 3, state.z_time.shape[0])
    state.z_time = _sample_log_rows(data - state.psi_deg[:, None] * per_group[None, :], rng)


def _cell_totals(state: GPIRMState, index: _EntryIndex) -> np.ndarray:
    counts = np.zeros(state.core.shape)
    s = index.subs
    np.add.at(
        counts,
        (state.z_country[s[:, 0]], state.z_country[s[:, 1]], state.z_action[s[:, 2]], state.z_time[s[:, 3]]),
        index.y,
    )
    return counts


def _update_core(state: GPIRMState, index: _EntryIndex, w: np.ndarray, rng: RngStream) -> None:
    eps0 = state.hyper.eps0
    x = _community_pair_mass(state, w)
    f_group = _group_mass(state.z_action, state.phi_deg, state.core.shape[2])
    p_group = _group_mass(state.z_time, state.psi_deg, state.core.shape[3])
    exposure = np.einsum("cd,k,r->cdkr", x, f_group, p_group)
    state.core = sample_gamma(eps0 + _cell_totals(state, index), eps0 + exposure, rng)


def _entity_totals(index: _EntryIndex, column: int, n: int) -> np.ndarray:
    return np.bincount(index.subs[:, column], weights=index.y, minlength=n)


def _update_country_degrees(state: GPIRMState, index: _EntryIndex, w: np.ndarray, rng: RngStream) -> None:
    eps0 = state.hyper.eps0
    c_n = state.core.shape[0]
    v = state.z_country.shape[0]
    f_group = _group_mass(state.z_action, state.phi_deg, state.core.shape[2])
    p_group = _group_mass(state.z_time, state.psi_deg, state.core.shape[3])
    pair_rate = np.einsum("cdkr,k,r->cd", state.core, f_group, p_group)
    totals = _entity_totals(index, 0, v) + _entity_totals(index, 1, v)
    for i in range(v):
        out_mass = _group_mass(state.z_country, w[i, :] * state.theta_deg, c_n)
        in_mass = _group_mass(state.z_country, w[:, i] * state.theta_deg, c_n)
        zi = state.z_country[i]
        exposure = pair_rate[zi] @ out_mass + pair_rate[:, zi] @ in_mass
        state.theta_deg[i] = sample_gamma(eps0 + totals[i], eps0 + exposure, rng)


def _update_action_degrees(state: GPIRMState, index: _EntryIndex, w: np.ndarray, rng: RngStream) -> None:
    eps0 = state.hyper.eps0
    x = _community_pair_mass(state, w)
    p_group = _group_mass(state.z_time, state.psi_deg, state.core.shape[3])
    per_group = np.einsum("cdkr,cd,r->k", state.core, x, p_group)
    totals = _entity_totals(index, 2, state.z_action.shape[0])
    state.phi_deg = sample_gamma(eps0 + totals, eps0 + per_group[state.z_action], rng)


def _update_time_degrees(state: GPIRMState, index: _EntryIndex, w: np.ndarray, rng: RngStream) -> None:
    eps0 = state.hyper.eps0
    x = _community_pair_mass(state, w)
    f_group = _group_mass(state.z_action, state.phi_deg, state.core.shape[2])
    per_group = np.einsum("cdkr,cd,k->r", state.core, x, f_group)
    totals = _entity_totals(index, 3, state.z_time.shape[0])
    state.psi_deg = sample_gamma(eps0 + totals, eps0 + per_group[state.z_time], rng)


def gpirm_sweep(
    state: GPIRMState,
    tensor: CountTensor,
    rng: RngStream,
    degree_corrected: Optional[bool] = None,
    dyads: Optional[np.ndarray] = None,
) -> GPIRMState:
    """
    One pass over the single-membership model

    Country assignments are drawn one at a time (their cells couple them); action and
    time-step assignments are conditionally independent and drawn together. Each
    conditional is a uniform prior times the Poisson likelihood of the entity's cells with
    the core held fixed. The core follows by gamma-Poisson conjugacy, then the degree
    scalars when degree correction is on.

    Returns:
        GPIRMState: a new state; the input is not modified
    """
    state = state.copy()
    if degree_corrected is not None:
        state.degree_corrected = degree_corrected
    w = all_dyads(state.z_country.shape[0]) if dyads is None else dyads
    index = _EntryIndex(tensor)

    _update_country_assignments(state, index, w, rng)
    _update_action_assignments(state, index, w, rng)
    _update_time_assignments(state, index, w, rng)
    _update_core(state, index, w, rng)
    if state.degree_corrected:
        _update_country_degrees(state, index, w, rng)
        _update_action_degrees(state, index, w, rng)
        _update_time_degrees(state, index, w, rng)
    return state.validate()


def gpirm_time_sweep(state: GPIRMState, tensor: CountTensor, rng: RngStream, dyads: np.ndarray) -> GPIRMState:
    """Resample only the time-step assignments (and time degrees) against `tensor`"""
    state = state.copy()
    index = _EntryIndex(tensor)
    _update_time_assignments(state, index, dyads, rng)
    if state.degree_corrected:
        _update_time_degrees(state, index, dyads, rng)
    return state.validate()
