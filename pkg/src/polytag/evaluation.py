"""Multi-label evaluation: metrics, fold plans, cross-validation, significance.

Metrics follow the micro-aggregation convention: per-label binary confusion
counts are summed across labels before the F-measure is computed.  Hamming
loss is the mean per-bit disagreement.  Cross-validation aggregates fold
metrics by unweighted mean; pooling the confusion counts across folds is
available behind a flag and labeled as such in the output.
"""

from __future__ import annotations

import csv
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from statistics import NormalDist
from typing import Callable, Sequence

import numpy as np

from .corpus import LabelSet, MultiLabelDataset


@dataclass(frozen=True)
class ConfusionTotals:
    """Micro-aggregated confusion counts: per-label binaries summed over labels."""

    tp: int = 0
    fp: int = 0
    tn: int = 0
    fn: int = 0

    def __add__(self, other: "ConfusionTotals") -> "ConfusionTotals":
        return ConfusionTotals(
            self.tp + other.tp, self.fp + other.fp, self.tn + other.tn, self.fn + other.fn
        )

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn


def _check_pairs(preds: Sequence[LabelSet], truths: Sequence[LabelSet], n_labels: int) -> None:
    if len(preds) != len(truths):
        raise ValueError(f"prediction/truth length mismatch: {len(preds)} vs {len(truths)}")
    for p, t in zip(preds, truths):
        if p.width != n_labels or t.width != n_labels:
            raise ValueError("label-set width does not match the label count")


def hamming_loss(preds: Sequence[LabelSet], truths: Sequence[LabelSet], n_labels: int) -> float:
    """Mean fraction of label bits on which prediction and truth disagree."""
    _check_pairs(preds, truths, n_labels)
    if not preds:
        raise ValueError("empty evaluation")
    disagreements = sum(p.symmetric_difference_size(t) for p, t in zip(preds, truths))
    return disagreements / (len(preds) * n_labels)


def micro_confusion(preds: Sequence[LabelSet], truths: Sequence[LabelSet], n_labels: int) -> ConfusionTotals:
    _check_pairs(preds, truths, n_labels)
    tp = fp = tn = fn = 0
    for p, t in zip(preds, truths):
        both = p.bits & t.bits
        tp += both.bit_count()
        fp += (p.bits & ~t.bits).bit_count()
        fn += (t.bits & ~p.bits).bit_count()
        tn += n_labels - (p.bits | t.bits).bit_count()
    return ConfusionTotals(tp=tp, fp=fp, tn=tn, fn=fn)


def f_beta(t: ConfusionTotals, beta: float = 1.0) -> float:
    """(1+b^2)tp / ((1+b^2)tp + b^2 fn + fp); zero denominator yields 0 by convention."""
    if not beta > 0:
        raise ValueError("beta must be > 0")
    b2 = beta * beta
    denominator = (1.0 + b2) * t.tp + b2 * t.fn + t.fp
    if denominator == 0:
        return 0.0
    return (1.0 + b2) * t.tp / denominator


def micro_f1(preds: Sequence[LabelSet], truths: Sequence[LabelSet], n_labels: int) -> float:
    return f_beta(micro_confusion(preds, truths, n_labels), beta=1.0)


@dataclass(frozen=True, eq=False)
class FoldPlan:
    """Partition of instance indices into folds whose sizes differ by at most one."""

    folds: int
    assignment: np.ndarray
    seed: int

    def __post_init__(self):
        assignment = np.asarray(self.assignment, dtype=np.int64)
        object.__setattr__(self, "assignment", assignment)
        sizes = np.bincount(assignment, minlength=self.folds)
        if sizes.size != self.folds or (sizes.max() - sizes.min()) > 1:
            raise ValueError("fold sizes must differ by at most one")

    def split(self, fold: int) -> tuple[np.ndarray, np.ndarray]:
        if not 0 <= fold < self.folds:
            raise ValueError(f"fold index {fold} outside 0..{self.folds - 1}")
        test = np.flatnonzero(self.assignment == fold)
        train = np.flatnonzero(self.assignment != fold)
        return train, test


def make_folds(ds: MultiLabelDataset, folds: int, seed: int, stratified: bool = False) -> FoldPlan:
    """Seeded shuffle with round-robin assignment; optional iterative stratification.

    The stratified mode assigns instances label-by-label (rarest label first)
    to the fold with the greatest remaining demand for that label, under hard
    per-fold capacity so sizes still differ by at most one.
    """
    n = len(ds)
    if folds < 2:
        raise ValueError("folds must be >= 2")
    if folds > n:
        raise ValueError(f"cannot split {n} instances into {folds} folds")
    rng = np.random.default_rng(seed & 0xFFFFFFFFFFFFFFFF)
    if not stratified:
        order = rng.permutation(n)
        assignment = np.empty(n, dtype=np.int64)
        assignment[order] = np.arange(n) % folds
        return FoldPlan(folds=folds, assignment=assignment, seed=seed)

    Y = ds.label_matrix().astype(np.int64)
    capacity = np.full(folds, n // folds, dtype=np.int64)
    capacity[: n % folds] += 1
    desired = np.outer(np.full(folds, 1.0 / folds), Y.sum(axis=0))
    assignment = np.full(n, -1, dtype=np.int64)
    remaining = set(range(n))
    label_order = np.argsort(Y.sum(axis=0), kind="stable")
    for j in label_order:
        rows = [i for i in remaining if Y[i, j]]
        rng.shuffle(rows)
        for i in rows:
            candidates = np.flatnonzero(capacity > 0)
            best = candidates[np.argmax(desired[candidates, j])]
            assignment[i] = best
            capacity[best] -= 1
            desired[best] -= Y[i]
            remaining.discard(i)
    leftovers = sorted(remaining)
    rng.shuffle(leftovers)
    for i in leftovers:
        candidates = np.flatnonzero(capacity > 0)
        best = candidates[np.argmax(capacity[candidates])]
        assignment[i] = best
        capacity[best] -= 1
    return FoldPlan(folds=folds, assignment=assignment, seed=seed)


@dataclass
class ExperimentResult:
    """Per-fold metrics for one (method, learner) cell plus their means."""

    method: str
    learner: str
    corpus: str
    fold_micro_f1: list[float] = field(default_factory=list)
    fold_hamming_loss: list[float] = field(default_factory=list)
    fit_seconds: list[float] = field(default_factory=list)
    predict_seconds: list[float] = field(default_factory=list)
    pooled_micro_f1: float | None = None
    pooled_hamming_loss: float | None = None

    @property
    def mean_micro_f1(self) -> float:
        return float(np.mean(self.fold_micro_f1))

    @property
    def mean_hamming_loss(self) -> float:
        return float(np.mean(self.fold_hamming_loss))


def cross_validate_fn(
    ds: MultiLabelDataset,
    fit_fn: Callable[[MultiLabelDataset], object],
    plan: FoldPlan,
    method: str = "",
    learner: str = "",
    corpus: str = "",
    pooled: bool = False,
) -> ExperimentResult:
    """Fit on all-but-one fold, score the held-out fold, for every fold.

    ``fit_fn`` maps a training dataset to a fitted model exposing
    ``predict_dataset``.  Errors are re-raised annotated with the fold index.
    """
    if plan.assignment.size != len(ds):
        raise ValueError("fold plan does not cover this dataset")
    result = ExperimentResult(method=method, learner=learner, corpus=corpus)
    pooled_confusion = ConfusionTotals()
    pooled_bits = 0
    pooled_cells = 0
    L = len(ds.space)
    for fold in range(plan.folds):
        train_idx, test_idx = plan.split(fold)
        try:
            started = time.perf_counter()
            model = fit_fn(ds.subset(train_idx))
            fitted = time.perf_counter()
            test = ds.subset(test_idx)
            preds = model.predict_dataset(test)
            done = time.perf_counter()
        except Exception as exc:
            raise RuntimeError(f"fold {fold}: {exc}") from exc
        truths = test.labelsets()
        result.fold_micro_f1.append(micro_f1(preds, truths, L))
        result.fold_hamming_loss.append(hamming_loss(preds, truths, L))
        result.fit_seconds.append(fitted - started)
        result.predict_seconds.append(done - fitted)
        if pooled:
            pooled_confusion = pooled_confusion + micro_confusion(preds, truths, L)
            pooled_bits += sum(p.symmetric_difference_size(t) for p, t in zip(preds, truths))
            pooled_cells += len(preds) * L
    if pooled:
        result.pooled_micro_f1 = f_beta(pooled_confusion, 1.0)
        result.pooled_hamming_loss = pooled_bits / pooled_cells
    return result


def cross_validate(
    ds: MultiLabelDataset,
    method: str,
    learner_spec,
    plan: FoldPlan,
    method_params: dict | None = None,
    table=None,
    corpus: str = "",
    pooled: bool = False,
) -> ExperimentResult:
    """Cross-validate one (method, learner) grid cell."""
    from . import transforms

    def fit_fn(train_ds: MultiLabelDataset):
        return transforms.fit_method(method, train_ds, learner_spec, method_params, table)

    learner_name = learner_spec.kind if learner_spec is not None else "knn"
    return cross_validate_fn(
        ds, fit_fn, plan, method=method, learner=learner_name, corpus=corpus, pooled=pooled
    )


# Two-tailed critical values of Student's t, df 1..30, by confidence level.
_T_CONFIDENCES = (0.80, 0.90, 0.95, 0.98, 0.99, 0.999)
_T_TABLE: dict[int, tuple[float, ...]] = {
    1: (3.0777, 6.3138, 12.7062, 31.8205, 63.6567, 636.6192),
    2: (1.8856, 2.9200, 4.3027, 6.9646, 9.9248, 31.5991),
    3: (1.6377, 2.3534, 3.1824, 4.5407, 5.8409, 12.9240),
    4: (1.5332, 2.1318, 2.7764, 3.7469, 4.6041, 8.6103),
    5: (1.4759, 2.0150, 2.5706, 3.3649, 4.0321, 6.8688),
    6: (1.4398, 1.9432, 2.4469, 3.1427, 3.7074, 5.9588),
    7: (1.4149, 1.8946, 2.3646, 2.9980, 3.4995, 5.4079),
    8: (1.3968, 1.8595, 2.3060, 2.8965, 3.3554, 5.0413),
    9: (1.3830, 1.8331, 2.2622, 2.8214, 3.2498, 4.7809),
    10: (1.3722, 1.8125, 2.2281, 2.7638, 3.1693, 4.5869),
    11: (1.3634, 1.7959, 2.2010, 2.7181, 3.1058, 4.4370),
    12: (1.3562, 1.7823, 2.1788, 2.6810, 3.0545, 4.3178),
    13: (1.3502, 1.7709, 2.1604, 2.6503, 3.0123, 4.2208),
    14: (1.3450, 1.7613, 2.1448, 2.6245, 2.9768, 4.1405),
    15: (1.3406, 1.7531, 2.1314, 2.6025, 2.9467, 4.0728),
    16: (1.3368, 1.7459, 2.1199, 2.5835, 2.9208, 4.0150),
    17: (1.3334, 1.7396, 2.1098, 2.5669, 2.8982, 3.9651),
    18: (1.3304, 1.7341, 2.1009, 2.5524, 2.8784, 3.9216),
    19: (1.3277, 1.7291, 2.0930, 2.5395, 2.8609, 3.8834),
    20: (1.3253, 1.7247, 2.0860, 2.5280, 2.8453, 3.8495),
    21: (1.3232, 1.7207, 2.0796, 2.5176, 2.8314, 3.8193),
    22: (1.3212, 1.7171, 2.0739, 2.5083, 2.8188, 3.7921),
    23: (1.3195, 1.7139, 2.0687, 2.4999, 2.8073, 3.7676),
    24: (1.3178, 1.7109, 2.0639, 2.4922, 2.7969, 3.7454),
    25: (1.3163, 1.7081, 2.0595, 2.4851, 2.7874, 3.7251),
    26: (1.3150, 1.7056, 2.0555, 2.4786, 2.7787, 3.7066),
    27: (1.3137, 1.7033, 2.0518, 2.4727, 2.7707, 3.6896),
    28: (1.3125, 1.7011, 2.0484, 2.4671, 2.7633, 3.6739),
    29: (1.3114, 1.6991, 2.0452, 2.4620, 2.7564, 3.6594),
    30: (1.3104, 1.6973, 2.0423, 2.4573, 2.7500, 3.6460),
}


def critical_t(confidence: float, df: int) -> float:
    """Two-tailed critical value from a built-in table (normal beyond df 30)."""
    if not 0.0 < confidence < 1.0:
        raise ValueError("confidence must lie in (0, 1)")
    if df < 1:
        raise ValueError("degrees of freedom must be >= 1")
    if df > 30:
        return NormalDist().inv_cdf((1.0 + confidence) / 2.0)
    try:
        column = _T_CONFIDENCES.index(confidence)
    except ValueError:
        raise ValueError(
            f"confidence {confidence} not tabulated; supported: {_T_CONFIDENCES}"
        ) from None
    return _T_TABLE[df][column]


def paired_t_test(
    a: Sequence[float], b: Sequence[float], confidence: float = 0.95
) -> tuple[float, bool]:
    """Paired two-tailed Student t on fold-wise differences.

    Zero-variance differences yield t = 0 (no rejection) when the mean is
    zero, and a signed-infinity sentinel (rejection) otherwise.
    """
    if len(a) != len(b):
        raise ValueError("score vectors must have equal length")
    n = len(a)
    if n < 2:
        raise ValueError("need at least two paired scores")
    diffs = np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64)
    mean = float(diffs.mean())
    sd = float(diffs.std(ddof=1))
    if sd == 0.0:
        if mean == 0.0:
            return 0.0, False
        return math.copysign(math.inf, mean), True
    t = mean / (sd / math.sqrt(n))
    return t, abs(t) > critical_t(confidence, n - 1)


CSV_COLUMNS = (
    "classifier",
    "method",
    "corpus",
    "fold",
    "micro_f1",
    "hamming_loss",
    "fit_seconds",
    "predict_seconds",
)


def results_rows(results: Sequence[ExperimentResult]) -> list[dict[str, str]]:
    """Fold rows then a 'mean' aggregate row per result (plus 'pooled' when present)."""
    rows = []
    for res in results:
        for fold, (f1, hl, fs, ps) in enumerate(
            zip(res.fold_micro_f1, res.fold_hamming_loss, res.fit_seconds, res.predict_seconds)
        ):
            rows.append(
                {
                    "classifier": res.learner,
                    "method": res.method,
                    "corpus": res.corpus,
                    "fold": str(fold),
                    "micro_f1": f"{f1:.6f}",
                    "hamming_loss": f"{hl:.6f}",
                    "fit_seconds": f"{fs:.3f}",
                    "predict_seconds": f"{ps:.3f}",
                }
            )
        rows.append(
            {
                "classifier": res.learner,
                "method": res.method,
                "corpus": res.corpus,
                "fold": "mean",
                "micro_f1": f"{res.mean_micro_f1:.6f}",
                "hamming_loss": f"{res.mean_hamming_loss:.6f}",
                "fit_seconds": f"{sum(res.fit_seconds):.3f}",
                "predict_seconds": f"{sum(res.predict_seconds):.3f}",
            }
        )
        if res.pooled_micro_f1 is not None:
            rows.append(
                {
                    "classifier": res.learner,
                    "method": res.method,
                    "corpus": res.corpus,
                    "fold": "pooled",
                    "micro_f1": f"{res.pooled_micro_f1:.6f}",
                    "hamming_loss": f"{res.pooled_hamming_loss:.6f}",
                    "fit_seconds": f"{sum(res.fit_seconds):.3f}",
                    "predict_seconds": f"{sum(res.predict_seconds):.3f}",
                }
            )
    return rows


def write_results_csv(
    results: Sequence[ExperimentResult],
    path: str | Path,
    failures: Sequence[tuple[str, str, str]] = (),
) -> None:
    """Emit the results table; failed cells appear as rows with fold='error'."""
    with Path(path).open("w", encoding="utf-8", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=CSV_COLUMNS)
        writer.writeheader()
        for row in results_rows(results):
            writer.writerow(row)
        for learner, method, corpus in failures:
            writer.writerow(
                {
                    "classifier": learner,
                    "method": method,
                    "corpus": corpus,
                    "fold": "error",
                    "micro_f1": "",
                    "hamming_loss": "",
                    "fit_seconds": "",
                    "predict_seconds": "",
                }
            )


def write_results_markdown(
    results: Sequence[ExperimentResult],
    path: str | Path,
    failures: Sequence[tuple[str, str, str, str]] = (),
) -> None:
    """Mean metrics pivoted as (classifier, method) rows by corpus columns."""
    corpora = sorted({r.corpus for r in results})
    keys = sorted({(r.learner, r.method) for r in results})
    by_cell = {(r.learner, r.method, r.corpus): r for r in results}
    lines = []
    for title, getter in (
        ("micro F1", lambda r: r.mean_micro_f1),
        ("hamming loss", lambda r: r.mean_hamming_loss),
    ):
        lines.append(f"## {title}")
        lines.append("")
        header = ["classifier", "method"] + corpora
        lines.append("| " + " | ".join(header) + " |")
        lines.append("|" + "|".join(["---"] * len(header)) + "|")
        for learner, method in keys:
            cells = [learner, method]
            for corpus in corpora:
                res = by_cell.get((learner, method, corpus))
                cells.append(f"{getter(res):.5f}" if res is not None else "-")
            lines.append("| " + " | ".join(cells) + " |")
        lines.append("")
    if failures:
        lines.append("## failed cells")
        lines.append("")
        for learner, method, corpus, message in failures:
            lines.append(f"- {learner} / {method} / {corpus}: {message}")
        lines.append("")
    Path(path).write_text("\n".join(lines), encoding="utf-8")
