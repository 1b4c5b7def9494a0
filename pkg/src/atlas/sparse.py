from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class SparseGradient:
    """Nonzero partial derivatives keyed by flat parameter index.

    ``indices`` is strictly increasing; ``values`` is aligned with it.
    """

    indices: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        idx = np.asarray(self.indices, dtype=np.int64)
        val = np.asarray(self.values, dtype=np.float64)
        if idx.shape != val.shape or idx.ndim != 1:
            raise ValueError("indices and values must be 1-d arrays of equal length")
        if idx.size > 1 and np.any(np.diff(idx) <= 0):
            raise ValueError("indices must be strictly increasing")
        object.__setattr__(self, "indices", idx)
        object.__setattr__(self, "values", val)

    @classmethod
    def from_unsorted(cls, indices, values) -> SparseGradient:
        """Build from possibly repeated, unordered pairs; repeats are summed, zeros dropped."""
        indices = np.asarray(indices, dtype=np.int64).ravel()
        values = np.asarray(values, dtype=np.float64).ravel()
        keep = values != 0.0
        indices, values = indices[keep], values[keep]
        uniq, inverse = np.unique(indices, return_inverse=True)
        if uniq.size == indices.size:
            order = np.argsort(indices, kind="stable")
            return cls(indices[order], values[order])
        summed = np.zeros(uniq.size)
        np.add.at(summed, inverse, values)
        keep = summed != 0.0
        return cls(uniq[keep], summed[keep])

    @classmethod
    def empty(cls) -> SparseGradient:
        return cls(np.zeros(0, dtype=np.int64), np.zeros(0))

    @property
    def nnz(self) -> int:
        return int(np.count_nonzero(self.values))

    def __len__(self) -> int:
        return int(self.indices.size)

    def l1(self) -> float:
        return float(np.abs(self.values).sum())

    def dot(self, other: SparseGradient) -> float:
        # merge on shared indices only; disjoint supports give a literal 0.0
        _, ia, ib = np.intersect1d(self.indices, other.indices, assume_unique=True,
                                   return_indices=True)
        if ia.size == 0:
            return 0.0
        return float(np.dot(self.values[ia], other.values[ib]))

    def to_dense(self, size: int) -> np.ndarray:
        out = np.zeros(size)
        out[self.indices] = self.values
        return out

    def __add__(self, other: SparseGradient) -> SparseGradient:
        return SparseGradient.from_unsorted(np.concatenate([self.indices, other.indices]),
                                            np.concatenate([self.values, other.values]))

    def scaled(self, factor: float) -> SparseGradient:
        return SparseGradient.from_unsorted(self.indices, self.values * factor)
