"""Exact k-nearest-neighbor search over sparse vectors.

Distances are Euclidean; ties are broken toward the lower stored index, which
the stable argsort over squared distances gives for free.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from .base import ProbabilisticClassifier, SingleLabelDataset, as_row

_CHUNK = 512


def _sq_norms(X: sp.csr_matrix) -> np.ndarray:
    return np.asarray(X.multiply(X).sum(axis=1)).ravel()


def squared_distances(Q: sp.csr_matrix, X: sp.csr_matrix, x_norms: np.ndarray | None = None) -> np.ndarray:
    """Dense (n_queries, n_points) matrix of squared Euclidean distances."""
    if x_norms is None:
        x_norms = _sq_norms(X)
    q_norms = _sq_norms(Q)
    cross = np.asarray((Q @ X.T).todense())
    d2 = q_norms[:, None] - 2.0 * cross + x_norms[None, :]
    np.maximum(d2, 0.0, out=d2)
    return d2


def neighbor_indices(
    X: sp.csr_matrix,
    Q: sp.csr_matrix,
    k: int,
    exclude_self: bool = False,
    x_norms: np.ndarray | None = None,
) -> np.ndarray:
    """Indices of the k nearest stored points per query, ascending (distance, index).

    With ``exclude_self`` the queries are assumed to be the stored points in
    order, and point i never appears among its own neighbors.
    """
    n = X.shape[0]
    limit = n - 1 if exclude_self else n
    if not 1 <= k <= limit:
        raise ValueError(f"k must lie in 1..{limit}, got {k}")
    if x_norms is None:
        x_norms = _sq_norms(X)
    out = np.empty((Q.shape[0], k), dtype=np.int64)
    for start in range(0, Q.shape[0], _CHUNK):
        stop = min(start + _CHUNK, Q.shape[0])
        d2 = squared_distances(Q[start:stop], X, x_norms)
        if exclude_self:
            rows = np.arange(start, stop)
            d2[np.arange(stop - start), rows] = np.inf
        order = np.argsort(d2, axis=1, kind="stable")
        out[start:stop] = order[:, :k]
    return out


def knn_neighbors(X: sp.csr_matrix, query, k: int) -> list[tuple[int, float]]:
    """The k nearest stored points to one query as (index, distance) pairs."""
    n = X.shape[0]
    if k < 1:
        raise ValueError("k must be >= 1")
    if k > n:
        raise ValueError(f"k={k} exceeds the {n} stored points")
    row = as_row(query, X.shape[1])
    d2 = squared_distances(row, X)[0]
    order = np.argsort(d2, kind="stable")[:k]
    return [(int(i), float(np.sqrt(d2[i]))) for i in order]


class KnnClassifier(ProbabilisticClassifier):
    """Majority-vote kNN; probabilities are neighbor class frequencies."""

    def __init__(self, data: SingleLabelDataset, k: int = 5):
        n = len(data)
        if k > n:
            raise ValueError(f"k={k} exceeds the {n} training points")
        self._X = data.X.tocsr()
        self._norms = _sq_norms(self._X)
        self._y = data.y
        self.k = k
        self.n_classes = data.n_classes
        self.n_features = int(self._X.shape[1])

    def predict_proba_matrix(self, X: sp.csr_matrix) -> np.ndarray:
        from .base import align_width

        Q = align_width(X.tocsr(), self.n_features)
        neigh = neighbor_indices(self._X, Q, self.k, x_norms=self._norms)
        out = np.zeros((Q.shape[0], self.n_classes), dtype=np.float64)
        for i in range(Q.shape[0]):
            counts = np.bincount(self._y[neigh[i]], minlength=self.n_classes)
            out[i] = counts / self.k
        return out
