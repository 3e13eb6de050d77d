"""Shared contract for the single-label base learners."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Mapping

import numpy as np
import scipy.sparse as sp

from ..corpus import SparseVector

PROB_TOLERANCE = 1e-9


@dataclass(frozen=True)
class ClassifierSpec:
    """Which learner to train, its hyperparameters, and the seed all randomness flows from."""

    kind: str
    params: Mapping[str, Any] = field(default_factory=dict)
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "params", dict(self.params))

    def param(self, name: str, default):
        return self.params.get(name, default)


@dataclass(frozen=True, eq=False)
class SingleLabelDataset:
    """Sparse feature rows with one class id per row; class ids live in 0..n_classes-1."""

    X: sp.csr_matrix
    y: np.ndarray
    n_classes: int

    def __post_init__(self):
        y = np.asarray(self.y, dtype=np.int64)
        if y.ndim != 1 or y.size != self.X.shape[0]:
            raise ValueError("y must be a 1-d array aligned with X rows")
        if y.size and (y.min() < 0 or y.max() >= self.n_classes):
            raise ValueError("class ids must lie in 0..n_classes-1")
        object.__setattr__(self, "y", y)

    def __len__(self) -> int:
        return int(self.X.shape[0])


def as_row(x: SparseVector | sp.spmatrix | np.ndarray, n_features: int) -> sp.csr_matrix:
    """A 1 x n_features CSR row; indices beyond the training dimension are dropped."""
    if isinstance(x, SparseVector):
        keep = x.indices < n_features
        return sp.csr_matrix(
            (x.values[keep], x.indices[keep], np.array([0, int(keep.sum())])),
            shape=(1, n_features),
        )
    if sp.issparse(x):
        return align_width(x.tocsr(), n_features)
    arr = np.asarray(x, dtype=np.float64).reshape(1, -1)
    return align_width(sp.csr_matrix(arr), n_features)


def align_width(X: sp.csr_matrix, n_features: int) -> sp.csr_matrix:
    """Slice or zero-pad a CSR matrix to the given column count."""
    if X.shape[1] == n_features:
        return X
    if X.shape[1] > n_features:
        return X[:, :n_features].tocsr()
    return sp.hstack(
        [X, sp.csr_matrix((X.shape[0], n_features - X.shape[1]))], format="csr"
    )


class ProbabilisticClassifier:
    """Fitted model exposing normalized class probabilities.

    Subclasses implement ``predict_proba_matrix`` over CSR input; the
    single-instance entry points funnel through it so out-of-range feature
    indices are handled once (treated as absent features).
    """

    n_classes: int
    n_features: int

    def predict_proba_matrix(self, X: sp.csr_matrix) -> np.ndarray:
        raise NotImplementedError

    def predict_proba(self, x) -> np.ndarray:
        return self.predict_proba_matrix(as_row(x, self.n_features))[0]

    def predict_matrix(self, X: sp.csr_matrix) -> np.ndarray:
        return np.argmax(self.predict_proba_matrix(X), axis=1)

    def predict(self, x) -> int:
        return int(np.argmax(self.predict_proba(x)))


class ConstantClassifier(ProbabilisticClassifier):
    """Degenerate model emitting probability 1 for a single class.

    Produced whenever the training slice holds one class only, e.g. a
    binary-relevance label that never occurs.
    """

    def __init__(self, class_id: int, n_classes: int, n_features: int = 0):
        if not 0 <= class_id < n_classes:
            raise ValueError("class_id outside 0..n_classes-1")
        self.class_id = int(class_id)
        self.n_classes = int(n_classes)
        self.n_features = int(n_features)

    def predict_proba_matrix(self, X: sp.csr_matrix) -> np.ndarray:
        out = np.zeros((X.shape[0], self.n_classes), dtype=np.float64)
        out[:, self.class_id] = 1.0
        return out
