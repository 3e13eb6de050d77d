"""Multi-label classification layer.

Six problem-transformation methods (binary relevance, classifier chains,
label powerset, random k-labelset ensembles, a hierarchy of multi-label
classifiers, and calibrated label ranking) plus the kNN adaptation that
assigns labels by a maximum-a-posteriori rule over neighbor label counts.
Every fitted model exposes the same surface: per-label scores in [0, 1] and
a decoded label set, over datasets or single instances.
"""

from __future__ import annotations

import itertools
import json
import math
import pickle
from dataclasses import dataclass, replace
from functools import cached_property
from pathlib import Path
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from . import learners, lstm
from .corpus import LabelSet, LabelSpace, MultiLabelDataset, MultiLabelInstance
from .learners import (
    ClassifierSpec,
    ConstantClassifier,
    SingleLabelDataset,
    align_width,
    as_row,
    neighbor_indices,
)
from .textprep import EmbeddingTable

METHODS = ("br", "cc", "lp", "rakel", "homer", "clr", "mlknn")

MODEL_MAGIC = b"PTMODEL1"
MODEL_FORMAT_VERSION = 1


class MultiLabelModel:
    """Common surface of every fitted multi-label model."""

    method: str = "?"

    def __init__(self, space: LabelSpace, threshold: float, representation: str, n_features: int = 0):
        if not 0.0 < threshold < 1.0:
            raise ValueError("threshold must lie in (0, 1)")
        if representation not in ("sparse", "sequence"):
            raise ValueError("representation must be 'sparse' or 'sequence'")
        self.space = space
        self.threshold = float(threshold)
        self.representation = representation
        self.n_features = int(n_features)

    # subclass hooks ------------------------------------------------------
    def _scores(self, payload) -> np.ndarray:
        raise NotImplementedError

    def _predict_bits(self, payload) -> np.ndarray:
        return (self._scores(payload) >= self.threshold).astype(np.uint8)

    # payload plumbing ----------------------------------------------------
    def _dataset_payload(self, ds: MultiLabelDataset):
        if self.representation == "sparse":
            if not ds.has_features:
                raise ValueError(f"{self.method} model expects sparse feature vectors")
            return align_width(ds.feature_matrix(), self.n_features)
        if not ds.has_sequences:
            raise ValueError(f"{self.method} model expects token-id sequences")
        return ds.sequences()

    def _instance_payload(self, inst: MultiLabelInstance):
        if self.representation == "sparse":
            if inst.features is None:
                raise ValueError(f"{self.method} model expects a sparse feature vector")
            return as_row(inst.features, self.n_features)
        if inst.sequence is None:
            raise ValueError(f"{self.method} model expects a token-id sequence")
        return inst.sequence.ids[None, :], np.array([inst.sequence.length], dtype=np.int64)

    # public surface ------------------------------------------------------
    def score_dataset(self, ds: MultiLabelDataset) -> np.ndarray:
        return self._scores(self._dataset_payload(ds))

    def predict_dataset(self, ds: MultiLabelDataset) -> list[LabelSet]:
        bits = self._predict_bits(self._dataset_payload(ds))
        return [LabelSet.from_mask(row) for row in bits]

    def score(self, inst: MultiLabelInstance) -> np.ndarray:
        return self._scores(self._instance_payload(inst))[0]

    def predict(self, inst: MultiLabelInstance) -> LabelSet:
        bits = self._predict_bits(self._instance_payload(inst))[0]
        return LabelSet.from_mask(bits)


def _label_subspec(spec: ClassifierSpec, offset: int) -> ClassifierSpec:
    return replace(spec, seed=spec.seed + offset)


# --------------------------------------------------------------------------
# binary relevance


class _LearnerScorer:
    def __init__(self, clf):
        self.clf = clf

    def positive_probs(self, X) -> np.ndarray:
        return self.clf.predict_proba_matrix(X)[:, 1]


class _LstmScorer:
    def __init__(self, params: lstm.LstmParams, table: EmbeddingTable, pool: str):
        self.params = params
        self.table = table
        self.pool = pool

    def positive_probs(self, payload) -> np.ndarray:
        ids, lengths = payload
        return lstm.probabilities(self.params, ids, lengths, self.table, self.pool)


class BrModel(MultiLabelModel):
    """One independent binary scorer per label."""

    method = "br"

    def __init__(self, space, threshold, representation, n_features, scorers):
        super().__init__(space, threshold, representation, n_features)
        self.scorers = scorers

    def _scores(self, payload) -> np.ndarray:
        return np.column_stack([s.positive_probs(payload) for s in self.scorers])


def fit_br(
    ds: MultiLabelDataset,
    spec: ClassifierSpec,
    threshold: float = 0.5,
    table: EmbeddingTable | None = None,
) -> BrModel:
    """Train |L| binary classifiers, one per label bit.

    A never-positive (or always-positive) label collapses to a constant
    scorer.  ``spec.kind == "lstm"`` routes through the recurrent binary
    classifier and needs token sequences plus the embedding table.
    """
    if not len(ds):
        raise ValueError("empty training data")
    Y = ds.label_matrix()
    if spec.kind == "lstm":
        if table is None:
            raise ValueError("BR with the LSTM learner needs an embedding table")
        ids, lengths = ds.sequences()
        cfg_base = _lstm_config(spec, ids.shape[1])
        scorers = []
        for j in range(len(ds.space)):
            cfg = replace(cfg_base, seed=spec.seed + j)
            data = [(seq_inst.sequence, int(Y[i, j])) for i, seq_inst in enumerate(ds)]
            scorers.append(_LstmScorer(lstm.train(data, cfg, table), table, cfg.pool))
        return BrModel(ds.space, threshold, "sequence", 0, scorers)
    X = ds.feature_matrix()
    scorers = []
    for j in range(len(ds.space)):
        data = SingleLabelDataset(X, Y[:, j].astype(np.int64), 2)
        scorers.append(_LearnerScorer(learners.fit(_label_subspec(spec, j), data)))
    return BrModel(ds.space, threshold, "sparse", X.shape[1], scorers)


_LSTM_PARAM_KEYS = {
    "hidden_size", "batch_size", "epochs", "learning_rate", "max_sequence_length", "pool"
}


def _lstm_config(spec: ClassifierSpec, seq_width: int) -> lstm.TrainConfig:
    unknown = set(spec.params) - _LSTM_PARAM_KEYS
    if unknown:
        raise ValueError(f"unknown lstm parameters: {sorted(unknown)}")
    return lstm.TrainConfig(
        hidden_size=spec.param("hidden_size", 25),
        batch_size=spec.param("batch_size", 32),
        epochs=spec.param("epochs", 10),
        learning_rate=spec.param("learning_rate", 0.01),
        max_sequence_length=spec.param("max_sequence_length", seq_width),
        seed=spec.seed,
        pool=spec.param("pool", "final"),
    )


# --------------------------------------------------------------------------
# classifier chains


class CcModel(MultiLabelModel):
    """Binary classifiers linked so each consumes the chain's earlier labels."""

    method = "cc"

    def __init__(self, space, threshold, n_features, order, classifiers):
        super().__init__(space, threshold, "sparse", n_features)
        self.order = tuple(order)
        self.classifiers = classifiers

    def _chain_pass(self, X) -> tuple[np.ndarray, np.ndarray]:
        n = X.shape[0]
        L = len(self.space)
        scores = np.zeros((n, L))
        bits = np.zeros((n, L), dtype=np.uint8)
        chain_cols: list[np.ndarray] = []
        for p, j in enumerate(self.order):
            if chain_cols:
                extra = sp.csr_matrix(np.column_stack(chain_cols))
                X_aug = sp.hstack([X, extra], format="csr")
            else:
                X_aug = X
            s = self.classifiers[p].predict_proba_matrix(X_aug)[:, 1]
            scores[:, j] = s
            predicted = (s >= self.threshold).astype(np.float64)
            bits[:, j] = predicted.astype(np.uint8)
            chain_cols.append(predicted)
        return scores, bits

    def _scores(self, payload) -> np.ndarray:
        return self._chain_pass(payload)[0]

    def _predict_bits(self, payload) -> np.ndarray:
        return self._chain_pass(payload)[1]


def fit_cc(
    ds: MultiLabelDataset,
    spec: ClassifierSpec,
    order: Sequence[int] | None = None,
    threshold: float = 0.5,
) -> CcModel:
    """Chain of binary classifiers; position p also sees the p earlier label bits.

    Training feeds the true bits; prediction feeds the thresholded outputs
    forward.  The default chain order is label-index order.
    """
    if spec.kind == "lstm":
        raise ValueError("classifier chains support sparse-feature learners only")
    if not len(ds):
        raise ValueError("empty training data")
    L = len(ds.space)
    order = tuple(range(L)) if order is None else tuple(int(j) for j in order)
    if sorted(order) != list(range(L)):
        raise ValueError(f"chain order must be a permutation of 0..{L - 1}")
    X = ds.feature_matrix()
    Y = ds.label_matrix()
    classifiers = []
    for p, j in enumerate(order):
        if p:
            extra = sp.csr_matrix(Y[:, list(order[:p])].astype(np.float64))
            X_aug = sp.hstack([X, extra], format="csr")
        else:
            X_aug = X
        data = SingleLabelDataset(X_aug, Y[:, j].astype(np.int64), 2)
        classifiers.append(learners.fit(_label_subspec(spec, p), data))
    return CcModel(ds.space, threshold, X.shape[1], order, classifiers)


# --------------------------------------------------------------------------
# label powerset


@dataclass(frozen=True)
class LabelsetCodebook:
    """Bijection between training label-set bit patterns and atomic class ids.

    Patterns are sorted ascending, so the lowest class id is the smallest
    bit pattern; multiclass argmax ties therefore resolve deterministically.
    """

    patterns: tuple[int, ...]
    width: int

    def __post_init__(self):
        if list(self.patterns) != sorted(set(self.patterns)):
            raise ValueError("codebook patterns must be unique and ascending")

    @cached_property
    def _codes(self) -> dict[int, int]:
        return {bits: code for code, bits in enumerate(self.patterns)}

    def __len__(self) -> int:
        return len(self.patterns)

    def encode(self, labels: LabelSet) -> int:
        try:
            return self._codes[labels.bits]
        except KeyError:
            raise KeyError(f"label combination {labels.indices()} unseen in training") from None

    def decode(self, code: int) -> LabelSet:
        return LabelSet(self.patterns[code], self.width)

    def membership_matrix(self) -> np.ndarray:
        out = np.zeros((len(self.patterns), self.width), dtype=np.float64)
        for code, bits in enumerate(self.patterns):
            for j in range(self.width):
                if (bits >> j) & 1:
                    out[code, j] = 1.0
        return out


class LpModel(MultiLabelModel):
    """One multiclass classifier over the training label combinations."""

    method = "lp"

    def __init__(self, space, n_features, codebook, classifier):
        super().__init__(space, 0.5, "sparse", n_features)
        self.codebook = codebook
        self.classifier = classifier

    def _code_probs(self, X) -> np.ndarray:
        return self.classifier.predict_proba_matrix(X)

    def _scores(self, payload) -> np.ndarray:
        probs = self._code_probs(payload)
        return np.clip(probs @ self.codebook.membership_matrix(), 0.0, 1.0)

    def _predict_bits(self, payload) -> np.ndarray:
        codes = np.argmax(self._code_probs(payload), axis=1)
        patterns = self.codebook.membership_matrix().astype(np.uint8)
        return patterns[codes]


def fit_lp(ds: MultiLabelDataset, spec: ClassifierSpec) -> LpModel:
    """Each distinct training label set becomes one atomic class."""
    if spec.kind == "lstm":
        raise ValueError("label powerset supports sparse-feature learners only")
    if not len(ds):
        raise ValueError("empty training data")
    codebook = LabelsetCodebook(tuple(sorted({i.labels.bits for i in ds})), len(ds.space))
    X = ds.feature_matrix()
    y = np.array([codebook.encode(inst.labels) for inst in ds], dtype=np.int64)
    clf = learners.fit(spec, SingleLabelDataset(X, y, len(codebook)))
    return LpModel(ds.space, X.shape[1], codebook, clf)


# --------------------------------------------------------------------------
# random k-labelsets


class _LpMember:
    """Label-powerset model restricted to one label subset."""

    def __init__(self, labels: tuple[int, ...], codebook: LabelsetCodebook, classifier):
        self.labels = labels
        self.codebook = codebook
        self.classifier = classifier

    def predict_bits(self, X) -> np.ndarray:
        codes = np.argmax(self.classifier.predict_proba_matrix(X), axis=1)
        patterns = self.codebook.membership_matrix().astype(np.uint8)
        return patterns[codes]


class RakelModel(MultiLabelModel):
    """Vote-aggregated ensemble of label-powerset models over random label subsets."""

    method = "rakel"

    def __init__(self, space, threshold, n_features, members, coverage):
        super().__init__(space, threshold, "sparse", n_features)
        self.members = members
        self.coverage = np.asarray(coverage, dtype=np.float64)

    @property
    def uncovered_labels(self) -> tuple[str, ...]:
        return tuple(self.space.names[j] for j in np.flatnonzero(self.coverage == 0))

    def _scores(self, payload) -> np.ndarray:
        n = payload.shape[0]
        votes = np.zeros((n, len(self.space)))
        for member in self.members:
            votes[:, list(member.labels)] += member.predict_bits(payload)
        safe = np.where(self.coverage > 0, self.coverage, 1.0)
        scores = votes / safe
        scores[:, self.coverage == 0] = 0.0
        return scores


def _sample_subsets(L: int, k: int, m: int, rng: np.random.Generator) -> list[tuple[int, ...]]:
    total = math.comb(L, k)
    if total <= 100_000:
        combos = list(itertools.combinations(range(L), k))
        picked = rng.choice(total, size=m, replace=False)
        return [combos[int(i)] for i in picked]
    subsets: list[tuple[int, ...]] = []
    seen: set[tuple[int, ...]] = set()
    while len(subsets) < m:
        cand = tuple(sorted(int(x) for x in rng.choice(L, size=k, replace=False)))
        if cand not in seen:
            seen.add(cand)
            subsets.append(cand)
    return subsets


def fit_rakel(
    ds: MultiLabelDataset,
    spec: ClassifierSpec,
    m: int,
    k: int,
    seed: int = 0,
    threshold: float = 0.5,
) -> RakelModel:
    """m distinct k-label subsets, one restricted label-powerset model each.

    A label's score is its positive-vote share among the members covering it;
    uncovered labels score zero and are reported on the model.
    """
    if spec.kind == "lstm":
        raise ValueError("random k-labelsets supports sparse-feature learners only")
    L = len(ds.space)
    if not 1 <= k <= L:
        raise ValueError(f"subset size k must lie in 1..{L}")
    if m < 1:
        raise ValueError("subset count m must be >= 1")
    total = math.comb(L, k)
    if m > total:
        raise ValueError(f"m={m} exceeds the {total} distinct size-{k} subsets")
    rng = np.random.default_rng(seed & 0xFFFFFFFFFFFFFFFF)
    subsets = _sample_subsets(L, k, m, rng)
    X = ds.feature_matrix()
    members = []
    coverage = np.zeros(L, dtype=np.int64)
    for index, labels in enumerate(subsets):
        coverage[list(labels)] += 1
        restricted = [inst.labels.restrict(labels) for inst in ds]
        codebook = LabelsetCodebook(tuple(sorted({r.bits for r in restricted})), k)
        y = np.array([codebook.encode(r) for r in restricted], dtype=np.int64)
        clf = learners.fit(_label_subspec(spec, index), SingleLabelDataset(X, y, len(codebook)))
        members.append(_LpMember(labels, codebook, clf))
    return RakelModel(ds.space, threshold, X.shape[1], members, coverage)


# --------------------------------------------------------------------------
# hierarchy of multi-label classifiers


@dataclass(eq=False)
class HomerLeaf:
    label: int


@dataclass(eq=False)
class HomerNode:
    clusters: list[tuple[int, ...]]
    classifiers: list
    children: list


def _balanced_kmeans(V: np.ndarray, k: int, rng: np.random.Generator, iters: int = 25) -> list[list[int]]:
    """k-means with fixed cluster capacities differing by at most one."""
    p = V.shape[0]
    caps = [p // k + (1 if i < p % k else 0) for i in range(k)]
    centers = V[rng.choice(p, size=k, replace=False)].astype(np.float64)
    assign = np.full(p, -1)
    for _ in range(iters):
        d2 = ((V[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        new_assign = np.full(p, -1)
        remaining = caps.copy()
        placed = 0
        for pos in np.argsort(d2, axis=None, kind="stable"):
            i, c = divmod(int(pos), k)
            if new_assign[i] == -1 and remaining[c] > 0:
                new_assign[i] = c
                remaining[c] -= 1
                placed += 1
                if placed == p:
                    break
        if np.array_equal(new_assign, assign):
            break
        assign = new_assign
        for c in range(k):
            centers[c] = V[assign == c].mean(axis=0)
    return [[int(i) for i in np.flatnonzero(assign == c)] for c in range(k)]


class HomerModel(MultiLabelModel):
    """Label hierarchy; a label's score is the minimum activation along its path.

    Thresholding that minimum is exactly the prune-on-inactive descent rule:
    a label can only fire when every ancestor meta-label fires.
    """

    method = "homer"

    def __init__(self, space, threshold, n_features, root, branching):
        super().__init__(space, threshold, "sparse", n_features)
        self.root = root
        self.branching = branching

    def _scores(self, payload) -> np.ndarray:
        n = payload.shape[0]
        scores = np.zeros((n, len(self.space)))
        stack = [(self.root, np.ones(n))]
        while stack:
            node, path_min = stack.pop()
            for clf, child in zip(node.classifiers, node.children):
                s = np.minimum(path_min, clf.predict_proba_matrix(payload)[:, 1])
                if isinstance(child, HomerLeaf):
                    scores[:, child.label] = s
                else:
                    stack.append((child, s))
        return scores


def fit_homer(
    ds: MultiLabelDataset,
    spec: ClassifierSpec,
    branching: int = 3,
    seed: int = 0,
    threshold: float = 0.5,
) -> HomerModel:
    """Recursively cluster labels (balanced k-means over co-occurrence rows),
    training per-node binary-relevance classifiers over child meta-labels.

    The root trains on the full dataset; deeper nodes train on the instances
    carrying at least one of their labels.  With |L| <= branching the tree is
    one level deep and reproduces plain binary relevance.
    """
    if spec.kind == "lstm":
        raise ValueError("the label hierarchy supports sparse-feature learners only")
    if branching < 2:
        raise ValueError("branching must be >= 2")
    if not len(ds):
        raise ValueError("empty training data")
    X = ds.feature_matrix()
    Y = ds.label_matrix().astype(np.int64)
    cooc = (Y.T @ Y).astype(np.float64)
    rng = np.random.default_rng(seed & 0xFFFFFFFFFFFFFFFF)
    counter = itertools.count()
    d = X.shape[1]

    def build(labels: list[int], rows: np.ndarray) -> HomerNode:
        if len(labels) <= branching:
            clusters = [(j,) for j in labels]
        else:
            groups = _balanced_kmeans(cooc[labels], branching, rng)
            clusters = sorted(
                (tuple(sorted(labels[i] for i in grp)) for grp in groups), key=min
            )
        classifiers = []
        for cluster in clusters:
            offset = next(counter)
            if rows.size == 0:
                classifiers.append(ConstantClassifier(0, 2, d))
                continue
            meta = Y[np.ix_(rows, list(cluster))].any(axis=1).astype(np.int64)
            data = SingleLabelDataset(X[rows], meta, 2)
            classifiers.append(learners.fit(_label_subspec(spec, offset), data))
        children = []
        for cluster in clusters:
            if len(cluster) == 1:
                children.append(HomerLeaf(cluster[0]))
            else:
                if rows.size:
                    keep = Y[np.ix_(rows, list(cluster))].any(axis=1)
                    sub_rows = rows[keep]
                else:
                    sub_rows = rows
                children.append(build(list(cluster), sub_rows))
        return HomerNode(list(clusters), classifiers, children)

    root = build(list(range(len(ds.space))), np.arange(len(ds)))
    return HomerModel(ds.space, threshold, X.shape[1], root, branching)


# --------------------------------------------------------------------------
# calibrated label ranking


class ClrModel(MultiLabelModel):
    """Pairwise label ranking with a virtual calibration label.

    A label is predicted when its vote count (pairwise wins plus a win over
    calibration) strictly exceeds the calibration label's own wins.  Pairs
    with no eligible training instances vote 0.5 each way and are flagged.
    """

    method = "clr"

    def __init__(self, space, n_features, pair_classifiers, calibration_classifiers, degenerate_pairs):
        super().__init__(space, 0.5, "sparse", n_features)
        self.pair_classifiers = pair_classifiers
        self.calibration_classifiers = calibration_classifiers
        self.degenerate_pairs = tuple(degenerate_pairs)

    @property
    def n_classifiers(self) -> int:
        trained = sum(1 for clf in self.pair_classifiers.values() if clf is not None)
        return trained + len(self.degenerate_pairs) + len(self.calibration_classifiers)

    def _votes(self, X) -> tuple[np.ndarray, np.ndarray]:
        n = X.shape[0]
        L = len(self.space)
        wins = np.zeros((n, L))
        calibration = np.zeros(n)
        for (a, b), clf in self.pair_classifiers.items():
            if clf is None:
                wins[:, a] += 0.5
                wins[:, b] += 0.5
                continue
            a_wins = (clf.predict_proba_matrix(X)[:, 1] >= 0.5).astype(np.float64)
            wins[:, a] += a_wins
            wins[:, b] += 1.0 - a_wins
        for j, clf in enumerate(self.calibration_classifiers):
            present = (clf.predict_proba_matrix(X)[:, 1] >= 0.5).astype(np.float64)
            wins[:, j] += present
            calibration += 1.0 - present
        return wins, calibration

    def _scores(self, payload) -> np.ndarray:
        wins, _ = self._votes(payload)
        return wins / len(self.space)

    def _predict_bits(self, payload) -> np.ndarray:
        wins, calibration = self._votes(payload)
        return (wins > calibration[:, None]).astype(np.uint8)


def fit_clr(ds: MultiLabelDataset, spec: ClassifierSpec) -> ClrModel:
    """|L|(|L|-1)/2 pairwise classifiers plus |L| calibration classifiers.

    An instance enters the (a, b) pair's training set only when exactly one
    of the two labels is relevant; the calibration classifiers are plain
    per-label presence models.
    """
    if spec.kind == "lstm":
        raise ValueError("calibrated label ranking supports sparse-feature learners only")
    L = len(ds.space)
    if L < 2:
        raise ValueError("calibrated label ranking needs at least two labels")
    if not len(ds):
        raise ValueError("empty training data")
    X = ds.feature_matrix()
    Y = ds.label_matrix().astype(np.int64)
    counter = itertools.count()
    pair_classifiers: dict[tuple[int, int], object] = {}
    degenerate = []
    for a, b in itertools.combinations(range(L), 2):
        offset = next(counter)
        eligible = (Y[:, a] ^ Y[:, b]).astype(bool)
        if not eligible.any():
            pair_classifiers[(a, b)] = None
            degenerate.append((a, b))
            continue
        data = SingleLabelDataset(X[eligible], Y[eligible, a], 2)
        pair_classifiers[(a, b)] = learners.fit(_label_subspec(spec, offset), data)
    calibration = []
    for j in range(L):
        offset = next(counter)
        data = SingleLabelDataset(X, Y[:, j], 2)
        calibration.append(learners.fit(_label_subspec(spec, offset), data))
    return ClrModel(ds.space, X.shape[1], pair_classifiers, calibration, degenerate)


# --------------------------------------------------------------------------
# multi-label kNN adaptation


class MlknnModel(MultiLabelModel):
    """Per-label MAP rule over the label counts seen among the k nearest neighbors."""

    method = "mlknn"

    def __init__(self, space, n_features, X_train, Y_train, k, s, prior1, cond1, cond0):
        super().__init__(space, 0.5, "sparse", n_features)
        self._X = X_train
        self._norms = np.asarray(X_train.multiply(X_train).sum(axis=1)).ravel()
        self._Y = Y_train
        self.k = k
        self.s = s
        self.prior1 = prior1
        self.cond1 = cond1
        self.cond0 = cond0

    def _posteriors(self, Xq) -> tuple[np.ndarray, np.ndarray]:
        neigh = neighbor_indices(self._X, Xq, self.k, x_norms=self._norms)
        delta = self._Y[neigh].sum(axis=1)
        cols = np.arange(len(self.space))[None, :]
        p1 = self.prior1[None, :] * self.cond1[cols, delta]
        p0 = (1.0 - self.prior1)[None, :] * self.cond0[cols, delta]
        return p1, p0

    def _scores(self, payload) -> np.ndarray:
        p1, p0 = self._posteriors(payload)
        return p1 / (p1 + p0)

    def _predict_bits(self, payload) -> np.ndarray:
        p1, p0 = self._posteriors(payload)
        return (p1 >= p0).astype(np.uint8)


def fit_mlknn(ds: MultiLabelDataset, k: int = 10, s: float = 1.0) -> MlknnModel:
    """Estimate label priors and neighbor-count likelihoods from the training set.

    Neighborhoods during fitting are leave-one-out; all counts are smoothed
    by ``s`` (Laplace over the k+1 count bins).
    """
    N = len(ds)
    if k < 1:
        raise ValueError("k must be >= 1")
    if k >= N:
        raise ValueError(f"k={k} must be smaller than the {N} training instances")
    if not s > 0:
        raise ValueError("smoothing s must be > 0")
    X = ds.feature_matrix()
    Y = ds.label_matrix().astype(np.int64)
    L = len(ds.space)
    neigh = neighbor_indices(X, X, k, exclude_self=True)
    delta = Y[neigh].sum(axis=1)
    c1 = np.zeros((L, k + 1), dtype=np.float64)
    c0 = np.zeros((L, k + 1), dtype=np.float64)
    for j in range(L):
        pos = Y[:, j] == 1
        c1[j] = np.bincount(delta[pos, j], minlength=k + 1)
        c0[j] = np.bincount(delta[~pos, j], minlength=k + 1)
    prior1 = (s + Y.sum(axis=0)) / (2.0 * s + N)
    cond1 = (s + c1) / (s * (k + 1) + c1.sum(axis=1, keepdims=True))
    cond0 = (s + c0) / (s * (k + 1) + c0.sum(axis=1, keepdims=True))
    return MlknnModel(ds.space, X.shape[1], X, Y.astype(np.uint8), k, s, prior1, cond1, cond0)


# --------------------------------------------------------------------------
# dispatch and serialization

_METHOD_PARAM_KEYS = {
    "br": {"threshold"},
    "cc": {"threshold", "order", "order_seed"},
    "lp": set(),
    "rakel": {"threshold", "subsets", "subset_size", "seed"},
    "homer": {"threshold", "branching", "seed"},
    "clr": set(),
    "mlknn": {"k", "s"},
}


def fit_method(
    method: str,
    ds: MultiLabelDataset,
    spec: ClassifierSpec | None = None,
    params: dict | None = None,
    table: EmbeddingTable | None = None,
) -> MultiLabelModel:
    """Train any of the multi-label methods from a (method, params, learner) cell."""
    method = method.lower()
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}; choose from {list(METHODS)}")
    params = dict(params or {})
    unknown = set(params) - _METHOD_PARAM_KEYS[method]
    if unknown:
        raise ValueError(f"unknown {method} parameters: {sorted(unknown)}")
    if method != "mlknn" and spec is None:
        raise ValueError(f"method {method!r} needs a learner spec")
    threshold = params.get("threshold", 0.5)
    if method == "br":
        return fit_br(ds, spec, threshold=threshold, table=table)
    if method == "cc":
        order = params.get("order")
        if order is None and "order_seed" in params:
            rng = np.random.default_rng(int(params["order_seed"]) & 0xFFFFFFFFFFFFFFFF)
            order = [int(j) for j in rng.permutation(len(ds.space))]
        return fit_cc(ds, spec, order=order, threshold=threshold)
    if method == "lp":
        return fit_lp(ds, spec)
    if method == "rakel":
        L = len(ds.space)
        k = int(params.get("subset_size", min(3, L)))
        default_m = min(2 * L, math.comb(L, k)) if 1 <= k <= L else 1
        m = int(params.get("subsets", default_m))
        return fit_rakel(ds, spec, m=m, k=k, seed=int(params.get("seed", spec.seed)), threshold=threshold)
    if method == "homer":
        return fit_homer(
            ds,
            spec,
            branching=int(params.get("branching", 3)),
            seed=int(params.get("seed", spec.seed)),
            threshold=threshold,
        )
    if method == "clr":
        return fit_clr(ds, spec)
    return fit_mlknn(ds, k=int(params.get("k", 10)), s=float(params.get("s", 1.0)))


def save_model(model: MultiLabelModel, path: str | Path) -> None:
    """Versioned container: magic, JSON header (method, labels), pickled state."""
    header = json.dumps(
        {
            "format": MODEL_FORMAT_VERSION,
            "method": model.method,
            "labels": list(model.space.names),
            "representation": model.representation,
        }
    ).encode("utf-8")
    with Path(path).open("wb") as fh:
        fh.write(MODEL_MAGIC)
        fh.write(len(header).to_bytes(4, "little"))
        fh.write(header)
        fh.write(pickle.dumps(model, protocol=pickle.HIGHEST_PROTOCOL))


def read_model_info(path: str | Path) -> dict:
    """Parse the self-describing header without unpickling the model state."""
    with Path(path).open("rb") as fh:
        if fh.read(8) != MODEL_MAGIC:
            raise ValueError("not a model container (bad magic)")
        size = int.from_bytes(fh.read(4), "little")
        info = json.loads(fh.read(size).decode("utf-8"))
    if info.get("format") != MODEL_FORMAT_VERSION:
        raise ValueError(f"unsupported model format {info.get('format')!r}")
    return info


def load_model(path: str | Path) -> MultiLabelModel:
    info = read_model_info(path)
    with Path(path).open("rb") as fh:
        fh.seek(8)
        size = int.from_bytes(fh.read(4), "little")
        fh.seek(8 + 4 + size)
        model = pickle.loads(fh.read())
    if model.method != info["method"]:
        raise ValueError("model header does not match its payload")
    return model
