"""Multinomial naive Bayes with Laplace smoothing."""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from .base import ProbabilisticClassifier, SingleLabelDataset, align_width


class MultinomialNaiveBayes(ProbabilisticClassifier):
    """Event-model NB over term counts (fractional weights are accepted as-is).

    Likelihood of term t under class c is (count + alpha) / (total + alpha * V);
    class priors are empirical frequencies.  Classes absent from the training
    data keep probability zero.
    """

    def __init__(self, data: SingleLabelDataset, alpha: float = 1.0):
        if alpha <= 0:
            raise ValueError("smoothing alpha must be > 0")
        X, y, C = data.X, data.y, data.n_classes
        n, V = X.shape
        counts = np.zeros((C, V), dtype=np.float64)
        class_n = np.zeros(C, dtype=np.float64)
        for c in range(C):
            rows = y == c
            class_n[c] = rows.sum()
            if class_n[c]:
                counts[c] = np.asarray(X[rows].sum(axis=0)).ravel()
        with np.errstate(divide="ignore"):
            self._log_prior = np.log(class_n / n)
        totals = counts.sum(axis=1, keepdims=True)
        self._log_likelihood = np.log(counts + alpha) - np.log(totals + alpha * V)
        self.n_classes = C
        self.n_features = V
        self.alpha = alpha

    def predict_proba_matrix(self, X: sp.csr_matrix) -> np.ndarray:
        X = align_width(X.tocsr(), self.n_features)
        scores = X @ self._log_likelihood.T + self._log_prior
        peak = scores.max(axis=1, keepdims=True)
        # all-(-inf) rows cannot happen: at least one class has prior > 0
        expd = np.exp(scores - peak)
        return expd / expd.sum(axis=1, keepdims=True)
