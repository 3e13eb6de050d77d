"""From-scratch single-label learners behind one probabilistic contract.

Every learner is trained through :func:`fit` with a :class:`ClassifierSpec`;
a training slice holding a single class collapses to a constant classifier so
callers (e.g. binary relevance on a never-positive label) need no special
casing.
"""

from __future__ import annotations

import numpy as np

from .base import (
    ClassifierSpec,
    ConstantClassifier,
    ProbabilisticClassifier,
    SingleLabelDataset,
    align_width,
    as_row,
)
from .knn import KnnClassifier, knn_neighbors, neighbor_indices, squared_distances
from .linear import LinearMargin
from .naive_bayes import MultinomialNaiveBayes
from .random_forest import RandomForest

KINDS = ("naive-bayes", "random-forest", "linear-margin", "knn")

_ALLOWED_PARAMS = {
    "naive-bayes": {"alpha"},
    "random-forest": {"trees", "max_depth", "min_samples_split", "bootstrap"},
    "linear-margin": {"learning_rate", "epochs", "l2"},
    "knn": {"k"},
}


def validate_spec(spec: ClassifierSpec) -> None:
    if spec.kind not in KINDS:
        raise ValueError(f"unknown classifier kind {spec.kind!r}; choose from {list(KINDS)}")
    unknown = set(spec.params) - _ALLOWED_PARAMS[spec.kind]
    if unknown:
        raise ValueError(f"unknown {spec.kind} parameters: {sorted(unknown)}")
    p = spec.params
    if spec.kind == "naive-bayes" and not p.get("alpha", 1.0) > 0:
        raise ValueError("alpha must be > 0")
    if spec.kind == "random-forest":
        if p.get("trees", 100) < 1:
            raise ValueError("trees must be >= 1")
        depth = p.get("max_depth")
        if depth is not None and depth < 1:
            raise ValueError("max_depth must be >= 1 or omitted")
        if p.get("min_samples_split", 2) < 2:
            raise ValueError("min_samples_split must be >= 2")
    if spec.kind == "linear-margin":
        lr = p.get("learning_rate", 0.1)
        if not (lr > 0 and np.isfinite(lr)):
            raise ValueError("learning_rate must be positive and finite")
        if p.get("epochs", 20) < 1:
            raise ValueError("epochs must be >= 1")
        if p.get("l2", 1e-4) < 0:
            raise ValueError("l2 must be >= 0")
    if spec.kind == "knn" and p.get("k", 5) < 1:
        raise ValueError("k must be >= 1")


def fit(spec: ClassifierSpec, data: SingleLabelDataset) -> ProbabilisticClassifier:
    """Train the learner named by the spec; deterministic given (seed, data)."""
    validate_spec(spec)
    if len(data) == 0:
        raise ValueError("empty training data")
    observed = np.unique(data.y)
    if observed.size == 1:
        return ConstantClassifier(int(observed[0]), data.n_classes, int(data.X.shape[1]))
    if spec.kind == "naive-bayes":
        return MultinomialNaiveBayes(data, alpha=spec.param("alpha", 1.0))
    if spec.kind == "random-forest":
        return RandomForest(
            data,
            trees=spec.param("trees", 100),
            max_depth=spec.param("max_depth", None),
            min_samples_split=spec.param("min_samples_split", 2),
            bootstrap=spec.param("bootstrap", True),
            seed=spec.seed,
        )
    if spec.kind == "linear-margin":
        return LinearMargin(
            data,
            learning_rate=spec.param("learning_rate", 0.1),
            epochs=spec.param("epochs", 20),
            l2=spec.param("l2", 1e-4),
            seed=spec.seed,
        )
    return KnnClassifier(data, k=spec.param("k", 5))


__all__ = [
    "ClassifierSpec",
    "ConstantClassifier",
    "KnnClassifier",
    "KINDS",
    "LinearMargin",
    "MultinomialNaiveBayes",
    "ProbabilisticClassifier",
    "RandomForest",
    "SingleLabelDataset",
    "align_width",
    "as_row",
    "fit",
    "knn_neighbors",
    "neighbor_indices",
    "squared_distances",
    "validate_spec",
]
