"""
Allocation Benchmark
Operation counts and wall-clock timings of joint vs compositional allocation over a grid of
latent dims
"""
import logging
import time
from typing import List, Sequence, Tuple

import numpy as np
from pydantic import BaseModel

from src.models.params import Hyperparams, ModelDims
from src.models.tensors import TokenArrays
from src.services.bptd_model import sample_prior
from src.services.distributions import RngStream
from src.services.gibbs import (
    DEFAULT_JOINT_CHUNK,
    AllocationStats,
    allocate_compositional,
    allocate_joint,
    allocation_cost,
    uniform_assignments,
)
from src.utils.tsv import PathOrStream, write_rows

logger = logging.getLogger(__name__)

DEFAULT_GRID: Tuple[Tuple[int, int, int], ...] = ((1, 1, 1), (20, 6, 3), (50, 8, 3), (50, 10, 5))
BENCHMARK_COLUMNS = (
    "C", "K", "R", "joint_classes", "compositional_weights", "ratio",
    "joint_seconds", "compositional_seconds", "speedup",
)


class BenchmarkRow(BaseModel):
    n_communities: int
    n_topics: int
    n_regimes: int
    joint_classes: int
    compositional_weights: int
    ratio: float
    joint_seconds: float
    compositional_seconds: float

    @property
    def speedup(self) -> float:
        return self.joint_seconds / self.compositional_seconds if self.compositional_seconds > 0 else float("inf")

    def to_row(self) -> tuple:
        return (
            self.n_communities, self.n_topics, self.n_regimes, self.joint_classes,
            self.compositional_weights, self.ratio, self.joint_seconds, self.compositional_seconds, self.speedup,
        )


def random_tokens(n_tokens: int, n_countries: int, n_actions: int, n_steps: int, rng: RngStream) -> TokenArrays:
    """Uniform event tokens with sender ≠ receiver"""
    gen = rng.generator
    sender = gen.integers(0, n_countries, n_tokens)
    receiver = (sender + gen.integers(1, n_countries, n_tokens)) % n_countries
    return TokenArrays(sender, receiver, gen.integers(0, n_actions, n_tokens), gen.integers(0, n_steps, n_tokens))


def benchmark_allocation(
    grid: Sequence[Tuple[int, int, int]],
    rng: RngStream,
    n_tokens: int = 1000,
    sweeps: int = 3,
    n_countries: int = 20,
    n_actions: int = 10,
    n_steps: int = 10,
    workers: int = 1,
    chunk_elements: int = DEFAULT_JOINT_CHUNK,
) -> List[BenchmarkRow]:
    """
    Time `sweeps` allocation passes of each scheme per grid point on random tokens

    Parameters are drawn from a flat prior (ε₀ = 1) so every class has non-negligible
    weight. Reported seconds are per sweep.
    """
    rows = []
    for c, k, r in grid:
        dims = ModelDims(
            n_countries=n_countries, n_actions=n_actions, n_steps=n_steps,
            n_communities=c, n_topics=k, n_regimes=r,
        )
        state = sample_prior(dims, Hyperparams(eps0=1.0, gamma0=float(c * c * k * r) ** 0.25), rng)
        tokens = random_tokens(n_tokens, n_countries, n_actions, n_steps, rng)

        started = time.perf_counter()
        for _ in range(sweeps):
            allocate_joint(state, tokens, rng, workers, chunk_elements)
        joint_seconds = (time.perf_counter() - started) / sweeps

        assignments = uniform_assignments(n_tokens, dims.core_shape, rng)
        stats = AllocationStats()
        started = time.perf_counter()
        for _ in range(sweeps):
            assignments, _ = allocate_compositional(state, tokens, assignments, rng, workers, stats)
        compositional_seconds = (time.perf_counter() - started) / sweeps

        cost = allocation_cost(dims)
        row = BenchmarkRow(
            n_communities=c, n_topics=k, n_regimes=r,
            joint_classes=cost.joint_classes, compositional_weights=cost.compositional_weights, ratio=cost.ratio,
            joint_seconds=joint_seconds, compositional_seconds=compositional_seconds,
        )
        logger.info(
            f"C={c} K={k} R={r}: {cost.joint_classes} classes vs {cost.compositional_weights} weights "
            f"(ratio {cost.ratio:.2f}), measured speedup {row.speedup:.1f}x, {stats.per_token():.0f} weights/token"
        )
        rows.append(row)
    return rows


def write_benchmark(rows: Sequence[BenchmarkRow], target: PathOrStream) -> int:
    return write_rows(target, BENCHMARK_COLUMNS, (row.to_row() for row in rows))
