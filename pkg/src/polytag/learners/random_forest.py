"""Random forest over CART-style trees with Gini impurity.

Defaults: 100 trees, bootstrap sampling, per-split feature sampling of
ceil(sqrt(d)), no depth limit.  All randomness flows from one seed through a
per-tree SeedSequence spawn, so a fitted forest is bit-reproducible.
"""

from __future__ import annotations

import math

import numpy as np
import scipy.sparse as sp

from .base import ProbabilisticClassifier, SingleLabelDataset, align_width

# node record: [feature, threshold, left, right, leaf_distribution]
_LEAF = -1


def _leaf_dist(counts: np.ndarray) -> np.ndarray:
    return counts / counts.sum()


def _best_split(vals: np.ndarray, y_node: np.ndarray, feats: np.ndarray, C: int):
    """Lowest weighted-Gini (feature, threshold) over the sampled features.

    Returns None when no feature admits a split (all values constant).
    """
    n = y_node.size
    total = np.bincount(y_node, minlength=C).astype(np.float64)
    best_score = np.inf
    best: tuple[int, float] | None = None
    for col in range(feats.size):
        x = vals[:, col]
        order = np.argsort(x, kind="stable")
        xs = x[order]
        if xs[0] == xs[-1]:
            continue
        ys = y_node[order]
        onehot = np.zeros((n, C), dtype=np.float64)
        onehot[np.arange(n), ys] = 1.0
        cum = np.cumsum(onehot, axis=0)
        cut = np.nonzero(xs[:-1] < xs[1:])[0]
        left_n = (cut + 1).astype(np.float64)
        right_n = n - left_n
        lc = cum[cut]
        rc = total - lc
        gini_left = 1.0 - np.sum((lc / left_n[:, None]) ** 2, axis=1)
        gini_right = 1.0 - np.sum((rc / right_n[:, None]) ** 2, axis=1)
        weighted = (left_n * gini_left + right_n * gini_right) / n
        i = int(np.argmin(weighted))
        if weighted[i] < best_score:
            best_score = weighted[i]
            thr = (xs[cut[i]] + xs[cut[i] + 1]) / 2.0
            best = (int(feats[col]), float(thr))
    return best


def _build_tree(
    X: np.ndarray,
    y: np.ndarray,
    C: int,
    rng: np.random.Generator,
    max_depth: int | None,
    min_samples_split: int,
    m_try: int,
) -> list[list]:
    d = X.shape[1]
    nodes: list[list] = []

    def new_node() -> int:
        nodes.append([_LEAF, 0.0, _LEAF, _LEAF, None])
        return len(nodes) - 1

    stack = [(new_node(), np.arange(X.shape[0]), 0)]
    while stack:
        nid, idx, depth = stack.pop()
        y_node = y[idx]
        counts = np.bincount(y_node, minlength=C).astype(np.float64)
        if (
            idx.size < min_samples_split
            or np.count_nonzero(counts) == 1
            or (max_depth is not None and depth >= max_depth)
        ):
            nodes[nid][4] = _leaf_dist(counts)
            continue
        feats = np.sort(rng.choice(d, size=min(m_try, d), replace=False))
        split = _best_split(X[np.ix_(idx, feats)], y_node, feats, C)
        if split is None:
            nodes[nid][4] = _leaf_dist(counts)
            continue
        feature, threshold = split
        go_left = X[idx, feature] <= threshold
        left, right = new_node(), new_node()
        nodes[nid][0] = feature
        nodes[nid][1] = threshold
        nodes[nid][2] = left
        nodes[nid][3] = right
        stack.append((left, idx[go_left], depth + 1))
        stack.append((right, idx[~go_left], depth + 1))
    return nodes


def _tree_proba(nodes: list[list], X: np.ndarray, C: int) -> np.ndarray:
    out = np.zeros((X.shape[0], C), dtype=np.float64)
    stack = [(0, np.arange(X.shape[0]))]
    while stack:
        nid, idx = stack.pop()
        if not idx.size:
            continue
        feature, threshold, left, right, dist = nodes[nid]
        if dist is not None:
            out[idx] = dist
            continue
        go_left = X[idx, feature] <= threshold
        stack.append((left, idx[go_left]))
        stack.append((right, idx[~go_left]))
    return out


class RandomForest(ProbabilisticClassifier):
    def __init__(
        self,
        data: SingleLabelDataset,
        trees: int = 100,
        max_depth: int | None = None,
        min_samples_split: int = 2,
        bootstrap: bool = True,
        seed: int = 0,
    ):
        X = data.X.toarray()
        y = data.y
        n, d = X.shape
        self.n_classes = data.n_classes
        self.n_features = d
        m_try = max(1, math.ceil(math.sqrt(d)))
        self._trees: list[list[list]] = []
        children = np.random.SeedSequence(seed & 0xFFFFFFFFFFFFFFFF).spawn(trees)
        for ss in children:
            rng = np.random.default_rng(ss)
            sample = rng.integers(0, n, size=n) if bootstrap else np.arange(n)
            self._trees.append(
                _build_tree(X[sample], y[sample], self.n_classes, rng, max_depth, min_samples_split, m_try)
            )

    def predict_proba_matrix(self, X: sp.csr_matrix) -> np.ndarray:
        dense = align_width(X.tocsr(), self.n_features).toarray()
        acc = np.zeros((dense.shape[0], self.n_classes), dtype=np.float64)
        for nodes in self._trees:
            acc += _tree_proba(nodes, dense, self.n_classes)
        return acc / len(self._trees)
