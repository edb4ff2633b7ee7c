"""
Sampler statistics and evaluation results
"""
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Set, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from src.core.config import ModelTag


@dataclass
class Assignments:
    """Current class of every token: sender community c, receiver community d, topic k, regime r"""
    c: np.ndarray
    d: np.ndarray
    k: np.ndarray
    r: np.ndarray

    def __len__(self) -> int:
        return int(self.c.shape[0])

    def block(self, start: int, stop: int) -> "Assignments":
        return Assignments(self.c[start:stop], self.d[start:stop], self.k[start:stop], self.r[start:stop])

    def copy(self) -> "Assignments":
        return Assignments(self.c.copy(), self.d.copy(), self.k.copy(), self.r.copy())

    @classmethod
    def concat(cls, parts: List["Assignments"]) -> "Assignments":
        return cls(
            np.concatenate([p.c for p in parts]),
            np.concatenate([p.d for p in parts]),
            np.concatenate([p.k for p in parts]),
            np.concatenate([p.r for p in parts]),
        )


@dataclass
class LatentSources:
    """
    Allocation counts that are sufficient for every conditional update

    send[i, c]: tokens with sender i allocated to sender community c
    recv[j, d]: tokens with receiver j allocated to receiver community d
    topic[a, k], regime[t, r] and core_counts[c, d, k, r] likewise
    """
    send: np.ndarray
    recv: np.ndarray
    topic: np.ndarray
    regime: np.ndarray
    core_counts: np.ndarray

    @property
    def total(self) -> int:
        return int(self.core_counts.sum())

    @property
    def involvement(self) -> np.ndarray:
        """m[i, c] = send + recv"""
        return self.send + self.recv

    def __add__(self, other: "LatentSources") -> "LatentSources":
        return LatentSources(
            self.send + other.send,
            self.recv + other.recv,
            self.topic + other.topic,
            self.regime + other.regime,
            self.core_counts + other.core_counts,
        )

    def is_consistent(self) -> bool:
        """Every marginal table sums to the same N and matches the core marginals"""
        n = self.total
        return (
            int(self.send.sum()) == n
            and int(self.recv.sum()) == n
            and int(self.topic.sum()) == n
            and int(self.regime.sum()) == n
            and np.array_equal(self.send.sum(axis=0), self.core_counts.sum(axis=(1, 2, 3)))
            and np.array_equal(self.recv.sum(axis=0), self.core_counts.sum(axis=(0, 2, 3)))
            and np.array_equal(self.topic.sum(axis=0), self.core_counts.sum(axis=(0, 1, 3)))
            and np.array_equal(self.regime.sum(axis=0), self.core_counts.sum(axis=(0, 1, 2)))
        )


class AllocationCost(BaseModel):
    """Per-token work of exact-joint vs compositional allocation"""
    model_config = ConfigDict(frozen=True)

    n_communities: int
    n_topics: int
    n_regimes: int
    joint_classes: int
    compositional_weights: int
    ratio: float


@dataclass
class HeldOutMask:
    """
    Dyads whose test-window cells are held out

    `held` is a V×V 0/1 matrix with a zero diagonal; the observed portion is its complement
    over the off-diagonal dyads.
    """
    held: np.ndarray
    name: str = "custom"
    ranked: List[int] = field(default_factory=list)

    @property
    def n_countries(self) -> int:
        return int(self.held.shape[0])

    @property
    def held_pairs(self) -> Set[Tuple[int, int]]:
        return {(int(i), int(j)) for i, j in np.argwhere(self.held > 0)}

    @property
    def observed(self) -> np.ndarray:
        obs = 1.0 - self.held
        np.fill_diagonal(obs, 0.0)
        return obs

    def inverted(self) -> "HeldOutMask":
        name = self.name[len("inverse-"):] if self.name.startswith("inverse-") else f"inverse-{self.name}"
        return HeldOutMask(held=self.observed, name=name, ranked=list(self.ranked))


@dataclass
class PredictionResult:
    """Averaged rates and plug-in probabilities of every held-out cell"""
    subs: np.ndarray
    observed: np.ndarray
    rates: np.ndarray
    probabilities: np.ndarray
    inverse_perplexity: float
    n_samples: int
    include_zeros: bool = True

    @property
    def n_elements(self) -> int:
        return int(self.observed.shape[0])


class ComparisonRow(BaseModel):
    """One (model, mask, seed) cell of a comparison table"""
    model: ModelTag
    mask: str
    seed: int
    inverse_perplexity: float
    scaled_value: float = 0.0
    wall_clock_seconds: float = 0.0


class MaskSummary(BaseModel):
    """Dispersion statistics of the held-out and observed portions of a test tensor"""
    mask: str
    held_token_share: float
    held_nonzero_fraction: float
    held_variance_to_mean: Optional[float] = None
    observed_variance_to_mean: Optional[float] = None


class GewekeResult(BaseModel):
    """z-scores comparing forward and successive-conditional draws of scalar statistics"""
    model: ModelTag
    n_samples: int
    z_scores: Dict[str, float] = Field(default_factory=dict)
    forward_means: Dict[str, float] = Field(default_factory=dict)
    successive_means: Dict[str, float] = Field(default_factory=dict)

    def max_abs_z(self) -> float:
        return max(abs(z) for z in self.z_scores.values())

    def passed(self, threshold: float = 4.0) -> bool:
        return self.max_abs_z() < threshold
