"""Linear max-margin classifier trained by stochastic sub-gradient descent.

Hinge loss with L2 regularization and a 1/(1 + lr*l2*t) step decay; class
probabilities come from a logistic link on the margin.  Multiclass problems
are handled one-vs-rest with the per-class probabilities renormalized.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from .base import ProbabilisticClassifier, SingleLabelDataset, align_width


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z, dtype=np.float64)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _train_binary(X: sp.csr_matrix, y_pm: np.ndarray, lr: float, epochs: int, l2: float, rng):
    n, d = X.shape
    w = np.zeros(d, dtype=np.float64)
    b = 0.0
    indptr, cols, vals = X.indptr, X.indices, X.data
    history = []
    t = 0
    for _ in range(epochs):
        for i in rng.permutation(n):
            t += 1
            eta = lr / (1.0 + lr * l2 * t)
            lo, hi = indptr[i], indptr[i + 1]
            ci, vi = cols[lo:hi], vals[lo:hi]
            margin = y_pm[i] * (vi @ w[ci] + b)
            if l2:
                w *= 1.0 - eta * l2
            if margin < 1.0:
                w[ci] += eta * y_pm[i] * vi
                b += eta * y_pm[i]
        raw = X @ w + b
        loss = np.maximum(0.0, 1.0 - y_pm * raw).mean() + 0.5 * l2 * float(w @ w)
        history.append(float(loss))
    return w, b, history


class LinearMargin(ProbabilisticClassifier):
    def __init__(
        self,
        data: SingleLabelDataset,
        learning_rate: float = 0.1,
        epochs: int = 20,
        l2: float = 1e-4,
        seed: int = 0,
    ):
        X, y, C = data.X.tocsr(), data.y, data.n_classes
        self.n_classes = C
        self.n_features = int(X.shape[1])
        self.loss_history: list[float] = []
        rng = np.random.default_rng(seed & 0xFFFFFFFFFFFFFFFF)
        if C == 2:
            w, b, self.loss_history = _train_binary(
                X, np.where(y == 1, 1.0, -1.0), learning_rate, epochs, l2, rng
            )
            self._W = w[None, :]
            self._b = np.array([b])
            self._binary = True
        else:
            ws, bs = [], []
            per_class_losses = []
            for c in range(C):
                w, b, hist = _train_binary(
                    X, np.where(y == c, 1.0, -1.0), learning_rate, epochs, l2, rng
                )
                ws.append(w)
                bs.append(b)
                per_class_losses.append(hist)
            self._W = np.stack(ws)
            self._b = np.array(bs)
            self.loss_history = list(np.sum(per_class_losses, axis=0))
            self._binary = False

    def margins(self, X: sp.csr_matrix) -> np.ndarray:
        X = align_width(X.tocsr(), self.n_features)
        return np.asarray(X @ self._W.T) + self._b

    def predict_proba_matrix(self, X: sp.csr_matrix) -> np.ndarray:
        m = self.margins(X)
        if self._binary:
            p1 = _sigmoid(m[:, 0])
            return np.column_stack([1.0 - p1, p1])
        p = _sigmoid(m)
        total = p.sum(axis=1, keepdims=True)
        uniform = np.full_like(p, 1.0 / self.n_classes)
        with np.errstate(invalid="ignore"):
            normalized = np.where(total > 0, p / total, uniform)
        return normalized
