"""Exact brute-force k-nearest-neighbor search (Euclidean, ties -> lower index)."""

from __future__ import annotations

import numpy as np


class NeighborIndex:
    """Read-only reference matrix for exact neighbor queries."""

    def __init__(self, reference: np.ndarray):
        X = np.array(reference, dtype=np.float64)
        if X.ndim == 1:
            X = X[:, None]
        if X.ndim != 2 or X.shape[0] < 1:
            raise ValueError("reference must be a non-empty (n, d) matrix")
        X.setflags(write=False)
        self._X = X

    @property
    def reference(self) -> np.ndarray:
        return self._X

    @property
    def n(self) -> int:
        return self._X.shape[0]

    def sq_distances(self, query: np.ndarray) -> np.ndarray:
        diff = self._X - query
        return np.einsum("ij,ij->i", diff, diff)


def knn_indices(index: NeighborIndex, query, k: int, exclude_self: bool = False) -> np.ndarray:
    """Return ``k`` reference indices ordered by distance to ``query``.

    ``query`` is either an integer row of the reference (with
    ``exclude_self`` dropping that row) or a vector; for a vector query
    ``exclude_self`` drops the lowest-index reference exactly equal to it.
    Distance ties resolve to the lower reference index.
    """
    if isinstance(query, (int, np.integer)):
        self_idx = int(query)
        if not 0 <= self_idx < index.n:
            raise IndexError(f"query row {self_idx} out of range for n={index.n}")
        q = index.reference[self_idx]
    else:
        q = np.asarray(query, dtype=np.float64).reshape(-1)
        if q.shape[0] != index.reference.shape[1]:
            raise ValueError("query dimension does not match reference")
        if not np.all(np.isfinite(q)):
            raise ValueError("query must be finite")
        self_idx = None

    d2 = index.sq_distances(q)
    if exclude_self and self_idx is None:
        exact = np.flatnonzero(d2 == 0.0)
        self_idx = int(exact[0]) if exact.size else None

    available = index.n - (1 if exclude_self and self_idx is not None else 0)
    if not 1 <= k <= available:
        raise ValueError(f"k={k} outside [1, {available}] available candidates")

    order = np.argsort(d2, kind="stable")
    if exclude_self and self_idx is not None:
        order = order[order != self_idx]
    return order[:k]


def knn_all(index: NeighborIndex, k: int) -> np.ndarray:
    """``(n, k)`` neighbor table of every reference row, self excluded."""
    return np.stack([knn_indices(index, i, k, exclude_self=True) for i in range(index.n)])
