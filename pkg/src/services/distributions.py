"""
Seeded random variate generation for all samplers

Every sampler draws through an `RngStream`, a numpy PCG64 generator keyed by a seed and
a stream id. Gamma draws use the shape-rate convention (mean shape/rate).
"""
import logging
from typing import Sequence, Tuple, Union

import numpy as np

from src.core.errors import NumericalError, ParameterError

logger = logging.getLogger(__name__)

ArrayLike = Union[float, np.ndarray]

# Smallest positive normal double; gamma draws that underflow are clamped here.
GAMMA_FLOOR = np.finfo(np.float64).tiny
RESCALE_HIGH = 1e300
RESCALE_LOW = 1e-300
CRT_MAX_COUNT = 1_000_000


class RngStream:
    """
    Deterministic random stream derived from (seed, stream id)

    Substreams spawned with different ids are statistically independent; the same
    (seed, id) always reproduces the same sequence.
    """

    def __init__(self, seed: int, stream_id: Tuple[int, ...] = ()):
        if seed < 0:
            raise ParameterError("seed must be a non-negative integer")
        self.seed = int(seed)
        self.stream_id = tuple(int(s) for s in stream_id)
        seq = np.random.SeedSequence(self.seed, spawn_key=self.stream_id)
        self.generator = np.random.Generator(np.random.PCG64(seq))

    def substream(self, stream_id: int) -> "RngStream":
        return RngStream(self.seed, self.stream_id + (int(stream_id),))

    def fork(self, n: int) -> Sequence["RngStream"]:
        """n fresh independent streams keyed by a draw from this stream"""
        key = int(self.generator.integers(0, 2**62))
        return [RngStream(self.seed, self.stream_id + (key, w)) for w in range(n)]

    def uniform(self, size=None):
        return self.generator.random(size)

    def __repr__(self):
        return f"RngStream(seed={self.seed}, stream_id={self.stream_id})"


def _check_finite_positive(name: str, value: ArrayLike) -> np.ndarray:
    arr = np.asarray(value, dtype=np.float64)
    if not np.all(np.isfinite(arr)) or np.any(arr <= 0):
        raise ParameterError(f"{name} must be positive and finite")
    return arr


def sample_gamma(shape: ArrayLike, rate: ArrayLike, rng: RngStream, size=None) -> ArrayLike:
    """
    Draw from Gamma(shape, rate), elementwise over broadcast arrays

    Shapes far below 1 are supported. Draws that underflow to exactly zero are clamped
    to the smallest positive normal double and logged.
    """
    shape_arr = _check_finite_positive("gamma shape", shape)
    rate_arr = _check_finite_positive("gamma rate", rate)
    draw = rng.generator.gamma(shape_arr, 1.0 / rate_arr, size=size)
    zeros = draw <= 0
    if np.any(zeros):
        logger.warning(f"Gamma draw underflow: clamped {int(np.sum(zeros))} value(s) to {GAMMA_FLOOR:.3e}")
        draw = np.where(zeros, GAMMA_FLOOR, draw)
    if np.ndim(draw) == 0:
        return float(draw)
    return draw


def sample_poisson(rate: ArrayLike, rng: RngStream, size=None) -> ArrayLike:
    """Poisson draw; rate 0 returns 0"""
    rate_arr = np.asarray(rate, dtype=np.float64)
    if not np.all(np.isfinite(rate_arr)) or np.any(rate_arr < 0):
        raise ParameterError("poisson rate must be non-negative and finite")
    draw = rng.generator.poisson(rate_arr, size=size)
    if np.ndim(draw) == 0:
        return int(draw)
    return draw.astype(np.int64)


def _rescale_rows(weights: np.ndarray) -> np.ndarray:
    peak = weights.max(axis=-1, keepdims=True)
    bad = (peak > RESCALE_HIGH) | ((peak < RESCALE_LOW) & (peak > 0))
    if np.any(bad):
        logger.debug(f"Rescaling {int(np.sum(bad))} categorical weight row(s)")
        weights = np.where(bad, weights / np.where(peak > 0, peak, 1.0), weights)
    return weights


def sample_categorical(weights: Sequence[float], rng: RngStream) -> int:
    """Draw index k with probability weights[k] / sum(weights)"""
    w = np.asarray(weights, dtype=np.float64)
    if w.ndim != 1 or w.size == 0:
        raise ParameterError("categorical weights must be a non-empty vector")
    if not np.all(np.isfinite(w)) or np.any(w < 0):
        raise ParameterError("categorical weights must be finite and non-negative")
    return int(sample_categorical_rows(w[None, :], rng)[0])


def sample_categorical_rows(weights: np.ndarray, rng: RngStream) -> np.ndarray:
    """
    One categorical draw per row of an (n, k) weight matrix

    Rows are normalized independently; a row summing to zero raises NumericalError.
    """
    w = _rescale_rows(np.asarray(weights, dtype=np.float64))
    cdf = np.cumsum(w, axis=1)
    total = cdf[:, -1]
    if not np.all(np.isfinite(total)) or np.any(total <= 0):
        raise NumericalError("categorical normalizer is zero or non-finite")
    u = rng.uniform(total.shape[0]) * total
    idx = (cdf <= u[:, None]).sum(axis=1)
    # guards u landing exactly on the last edge
    return np.minimum(idx, w.shape[1] - 1)


def sample_crt(count: int, concentration: float, rng: RngStream) -> int:
    """
    Chinese restaurant table count: l = Σ_{n=1..m} Bernoulli(a / (a + n - 1))
    """
    return int(sample_crt_array(np.array([count]), np.array([concentration]), rng)[0])


def sample_crt_array(counts: np.ndarray, concentration: ArrayLike, rng: RngStream) -> np.ndarray:
    """
    Elementwise CRT draws for an array of customer counts

    Uses the exact m-step Bernoulli recurrence, vectorized over all customers.
    """
    m = np.asarray(counts)
    if np.any(m < 0) or not np.all(np.equal(np.mod(m, 1), 0)):
        raise ParameterError("CRT counts must be non-negative integers")
    m = m.astype(np.int64)
    a = np.broadcast_to(np.asarray(concentration, dtype=np.float64), m.shape)
    if not np.all(np.isfinite(a)) or np.any(a <= 0):
        raise ParameterError("CRT concentration must be positive and finite")
    if m.size and m.max() > CRT_MAX_COUNT:
        raise ParameterError(f"CRT count exceeds {CRT_MAX_COUNT}")
    flat_m = m.reshape(-1)
    flat_a = a.reshape(-1)
    total = int(flat_m.sum())
    if total == 0:
        return np.zeros(m.shape, dtype=np.int64)
    owner = np.repeat(np.arange(flat_m.size), flat_m)
    starts = np.cumsum(flat_m) - flat_m
    position = np.arange(total) - np.repeat(starts, flat_m)
    prob = flat_a[owner] / (flat_a[owner] + position)
    opened = rng.uniform(total) < prob
    tables = np.bincount(owner, weights=opened, minlength=flat_m.size)
    return tables.astype(np.int64).reshape(m.shape)
