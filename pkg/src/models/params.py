"""
Model dimensions, hyperparameters and the BPTD parameter state
"""
from collections import OrderedDict
from dataclasses import dataclass, field, replace
from typing import Dict, Optional, Protocol

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from src.core.errors import NumericalError


class ModelDims(BaseModel):
    """Index-set sizes: countries, actions, time steps, communities, topics, regimes"""
    model_config = ConfigDict(frozen=True)

    n_countries: int = Field(ge=1)
    n_actions: int = Field(ge=1)
    n_steps: int = Field(ge=1)
    n_communities: int = Field(ge=1)
    n_topics: int = Field(ge=1)
    n_regimes: int = Field(ge=1)

    @property
    def tensor_shape(self):
        return (self.n_countries, self.n_countries, self.n_actions, self.n_steps)

    @property
    def core_shape(self):
        return (self.n_communities, self.n_communities, self.n_topics, self.n_regimes)

    @property
    def n_classes(self) -> int:
        return self.n_communities ** 2 * self.n_topics * self.n_regimes

    def with_steps(self, n_steps: int) -> "ModelDims":
        return self.model_copy(update={"n_steps": n_steps})


class Hyperparams(BaseModel):
    """ε₀ and γ₀, plus optional clamps for δ and ζ"""
    model_config = ConfigDict(frozen=True)

    eps0: float = Field(default=0.1, gt=0)
    gamma0: float = Field(default=1.0, gt=0)
    fixed_delta: Optional[float] = Field(default=None, gt=0)
    fixed_zeta: Optional[float] = Field(default=None, gt=0)


class TuckerLike(Protocol):
    """Anything exposing the four Tucker factor arrays"""
    theta: np.ndarray
    phi: np.ndarray
    psi: np.ndarray
    core: np.ndarray


@dataclass
class TuckerFactors:
    """Bare Tucker factors without positivity requirements (embeddings, zero-clamped states)"""
    theta: np.ndarray
    phi: np.ndarray
    psi: np.ndarray
    core: np.ndarray


@dataclass
class BPTDState:
    """
    All latent parameters of the model

    theta V×C, phi A×K, psi T×R, core C×C×K×R (core[c, d, k, r] is the rate at which
    community c directs topic-k actions at community d during regime r), community
    weights eta_within / eta_between (C), topic weights nu (K), regime weights rho (R),
    scalars delta and zeta, and per-country gamma shape/rate alpha, beta (V).
    """
    theta: np.ndarray
    phi: np.ndarray
    psi: np.ndarray
    core: np.ndarray
    eta_within: np.ndarray
    eta_between: np.ndarray
    nu: np.ndarray
    rho: np.ndarray
    delta: float
    zeta: float
    alpha: np.ndarray
    beta: np.ndarray
    hyper: Hyperparams = field(default_factory=Hyperparams)

    ARRAY_ORDER = (
        "theta", "phi", "psi", "core",
        "eta_within", "eta_between", "nu", "rho", "alpha", "beta",
    )

    def dims(self, n_steps: Optional[int] = None) -> ModelDims:
        v, c = self.theta.shape
        a, k = self.phi.shape
        t, r = self.psi.shape
        return ModelDims(
            n_countries=v, n_actions=a, n_steps=n_steps or t,
            n_communities=c, n_topics=k, n_regimes=r,
        )

    def copy(self) -> "BPTDState":
        return replace(self, **{name: getattr(self, name).copy() for name in self.ARRAY_ORDER})

    def core_shape(self) -> np.ndarray:
        """Prior gamma shape of every core cell, floored at the smallest normal double"""
        pair = np.outer(self.eta_between, self.eta_between)
        np.fill_diagonal(pair, self.eta_within * self.eta_between)
        shape = pair[:, :, None, None] * self.nu[None, None, :, None] * self.rho[None, None, None, :]
        return np.maximum(shape, np.finfo(np.float64).tiny)

    def validate(self) -> "BPTDState":
        """Raise NumericalError unless every field is strictly positive and finite"""
        for name in self.ARRAY_ORDER:
            arr = getattr(self, name)
            if not np.all(np.isfinite(arr)) or np.any(arr <= 0):
                raise NumericalError(f"state field {name} is not strictly positive and finite")
        for name in ("delta", "zeta"):
            value = getattr(self, name)
            if not np.isfinite(value) or value <= 0:
                raise NumericalError(f"state scalar {name}={value} is not strictly positive")
        return self

    def to_arrays(self) -> "OrderedDict[str, np.ndarray]":
        """Named arrays in checkpoint order: factors, core, weights, scalars"""
        out: "OrderedDict[str, np.ndarray]" = OrderedDict()
        for name in self.ARRAY_ORDER:
            out[name] = getattr(self, name)
        out["scalars"] = np.array([self.delta, self.zeta])
        out["hyper"] = np.array([
            self.hyper.eps0,
            self.hyper.gamma0,
            np.nan if self.hyper.fixed_delta is None else self.hyper.fixed_delta,
            np.nan if self.hyper.fixed_zeta is None else self.hyper.fixed_zeta,
        ])
        return out

    @classmethod
    def from_arrays(cls, arrays: Dict[str, np.ndarray]) -> "BPTDState":
        eps0, gamma0, fixed_delta, fixed_zeta = arrays["hyper"]
        hyper = Hyperparams(
            eps0=float(eps0),
            gamma0=float(gamma0),
            fixed_delta=None if np.isnan(fixed_delta) else float(fixed_delta),
            fixed_zeta=None if np.isnan(fixed_zeta) else float(fixed_zeta),
        )
        return cls(
            **{name: np.array(arrays[name], dtype=np.float64) for name in cls.ARRAY_ORDER},
            delta=float(arrays["scalars"][0]),
            zeta=float(arrays["scalars"][1]),
            hyper=hyper,
        )
