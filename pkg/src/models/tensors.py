"""
Sparse count tensor and the token view of it
"""
from dataclasses import dataclass
from typing import Dict, Iterator, Tuple

import numpy as np

Key = Tuple[int, int, int, int]


@dataclass(frozen=True)
class TokenArrays:
    """Event tokens as parallel index arrays (sender, receiver, action, time)"""
    sender: np.ndarray
    receiver: np.ndarray
    action: np.ndarray
    time: np.ndarray

    def __len__(self) -> int:
        return int(self.sender.shape[0])

    def block(self, start: int, stop: int) -> "TokenArrays":
        return TokenArrays(
            self.sender[start:stop],
            self.receiver[start:stop],
            self.action[start:stop],
            self.time[start:stop],
        )


@dataclass(frozen=True)
class CountTensor:
    """
    Sparse V×V×A×T tensor of event-type counts

    Nonzero entries are held as a sorted (nnz, 4) index array plus a positive count
    per entry; zero entries are implicit. Sorting by key fixes the iteration order so
    token expansion, exports and checkpoints are deterministic.
    """
    dims: Tuple[int, int, int, int]
    subs: np.ndarray
    counts: np.ndarray

    @classmethod
    def empty(cls, dims: Tuple[int, int, int, int]) -> "CountTensor":
        return cls(tuple(int(d) for d in dims), np.zeros((0, 4), dtype=np.int64), np.zeros(0, dtype=np.int64))

    @classmethod
    def from_arrays(cls, dims, subs: np.ndarray, counts: np.ndarray) -> "CountTensor":
        """Aggregate duplicate keys, drop zero counts and sort by key"""
        dims = tuple(int(d) for d in dims)
        subs = np.asarray(subs, dtype=np.int64).reshape(-1, 4)
        counts = np.asarray(counts, dtype=np.int64).reshape(-1)
        keep = counts > 0
        subs, counts = subs[keep], counts[keep]
        if subs.shape[0] == 0:
            return cls.empty(dims)
        flat = np.ravel_multi_index(subs.T, dims)
        uniq, inverse = np.unique(flat, return_inverse=True)
        summed = np.bincount(inverse, weights=counts).astype(np.int64)
        out = np.stack(np.unravel_index(uniq, dims), axis=1).astype(np.int64)
        return cls(dims, out, summed)

    @classmethod
    def from_dense(cls, dense: np.ndarray) -> "CountTensor":
        subs = np.argwhere(dense > 0)
        return cls.from_arrays(dense.shape, subs, dense[tuple(subs.T)])

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def nnz(self) -> int:
        return int(self.counts.shape[0])

    @property
    def entries(self) -> Dict[Key, int]:
        return {tuple(int(x) for x in s): int(c) for s, c in zip(self.subs, self.counts)}

    def items(self) -> Iterator[Tuple[Key, int]]:
        for s, c in zip(self.subs, self.counts):
            yield (int(s[0]), int(s[1]), int(s[2]), int(s[3])), int(c)

    def to_dense(self) -> np.ndarray:
        dense = np.zeros(self.dims, dtype=np.int64)
        if self.nnz:
            dense[tuple(self.subs.T)] = self.counts
        return dense

    def tokens(self) -> TokenArrays:
        """Expand entries into one token per event, in sorted-key order"""
        rep = np.repeat(self.subs, self.counts, axis=0)
        return TokenArrays(rep[:, 0], rep[:, 1], rep[:, 2], rep[:, 3])

    def time_slice(self, start: int, stop: int) -> "CountTensor":
        """Steps [start, stop) re-indexed from 0"""
        keep = (self.subs[:, 3] >= start) & (self.subs[:, 3] < stop)
        subs = self.subs[keep].copy()
        subs[:, 3] -= start
        v, _, a, _ = self.dims
        return CountTensor((v, v, a, stop - start), subs, self.counts[keep].copy())

    def restrict_dyads(self, dyad_weights: np.ndarray) -> "CountTensor":
        """Keep entries whose (i, j) dyad has nonzero weight"""
        keep = dyad_weights[self.subs[:, 0], self.subs[:, 1]] > 0
        return CountTensor(self.dims, self.subs[keep].copy(), self.counts[keep].copy())

    def sender_totals(self) -> np.ndarray:
        return np.bincount(self.subs[:, 0], weights=self.counts, minlength=self.dims[0]).astype(np.int64)

    def receiver_totals(self) -> np.ndarray:
        return np.bincount(self.subs[:, 1], weights=self.counts, minlength=self.dims[1]).astype(np.int64)


def all_dyads(n_countries: int) -> np.ndarray:
    """V×V dyad-weight matrix selecting every ordered pair i≠j"""
    w = np.ones((n_countries, n_countries))
    np.fill_diagonal(w, 0.0)
    return w
