"""Corpus model for multi-label text data.

Label sets are fixed-width bitsets over an ordered label universe, instances
carry raw text, a sparse feature vector, or an encoded token-id sequence, and
datasets tie instances to their label space.  Also home to the JSONL corpus
I/O, the vote-threshold filter used to clean reaction-vote corpora, and the
basic label statistics (cardinality, density, per-label counts).
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Iterable, Iterator, Mapping, NamedTuple, Sequence

import numpy as np
import scipy.sparse as sp

MAX_LABELS = 64


class CorpusError(ValueError):
    """Malformed corpus input; the message names the offending line when known."""


@dataclass(frozen=True)
class LabelSpace:
    """Ordered universe of distinct label names; index j is the bit position of names[j]."""

    names: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "names", tuple(self.names))
        if not 1 <= len(self.names) <= MAX_LABELS:
            raise ValueError(f"label space must hold 1..{MAX_LABELS} labels, got {len(self.names)}")
        if any(not isinstance(n, str) or not n for n in self.names):
            raise ValueError("label names must be non-empty strings")
        if len(set(self.names)) != len(self.names):
            raise ValueError("label names must be unique")

    @classmethod
    def sorted_union(cls, labelled: Iterable[Iterable[str]]) -> "LabelSpace":
        """Label space covering every observed name, sorted for run-to-run determinism."""
        seen: set[str] = set()
        for labels in labelled:
            seen.update(labels)
        if not seen:
            raise ValueError("no labels observed")
        return cls(tuple(sorted(seen)))

    @cached_property
    def _index(self) -> dict[str, int]:
        return {name: j for j, name in enumerate(self.names)}

    def index(self, name: str) -> int:
        try:
            return self._index[name]
        except KeyError:
            raise KeyError(f"label {name!r} not in label space {list(self.names)}") from None

    def __len__(self) -> int:
        return len(self.names)

    def __iter__(self) -> Iterator[str]:
        return iter(self.names)

    def __contains__(self, name: object) -> bool:
        return name in self._index


@dataclass(frozen=True)
class LabelSet:
    """Subset of a label space as a fixed-width bitset: bit j set = label j present."""

    bits: int
    width: int

    def __post_init__(self):
        if not 1 <= self.width <= MAX_LABELS:
            raise ValueError(f"label-set width must lie in 1..{MAX_LABELS}, got {self.width}")
        if self.bits < 0 or self.bits >> self.width:
            raise ValueError("bit pattern does not fit the label-space width")

    @classmethod
    def empty(cls, width: int) -> "LabelSet":
        return cls(0, width)

    @classmethod
    def from_indices(cls, width: int, indices: Iterable[int]) -> "LabelSet":
        bits = 0
        for j in indices:
            j = int(j)
            if not 0 <= j < width:
                raise ValueError(f"label index {j} outside width {width}")
            bits |= 1 << j
        return cls(bits, width)

    @classmethod
    def from_names(cls, space: LabelSpace, names: Iterable[str]) -> "LabelSet":
        return cls.from_indices(len(space), (space.index(n) for n in names))

    @classmethod
    def from_mask(cls, mask: Sequence[int] | np.ndarray) -> "LabelSet":
        arr = np.asarray(mask)
        bits = 0
        for j in np.flatnonzero(arr):
            bits |= 1 << int(j)
        return cls(bits, int(arr.size))

    @property
    def size(self) -> int:
        return self.bits.bit_count()

    def __contains__(self, index: int) -> bool:
        return bool((self.bits >> index) & 1)

    def indices(self) -> tuple[int, ...]:
        return tuple(j for j in range(self.width) if (self.bits >> j) & 1)

    def names(self, space: LabelSpace) -> tuple[str, ...]:
        if len(space) != self.width:
            raise ValueError("label space width mismatch")
        return tuple(space.names[j] for j in self.indices())

    def symmetric_difference_size(self, other: "LabelSet") -> int:
        if other.width != self.width:
            raise ValueError("label-set widths differ")
        return (self.bits ^ other.bits).bit_count()

    def complement(self) -> "LabelSet":
        full = (1 << self.width) - 1
        return LabelSet(full & ~self.bits, self.width)

    def restrict(self, indices: Sequence[int]) -> "LabelSet":
        """Project onto a label subset; bit p of the result is bit indices[p] of self."""
        bits = 0
        for p, j in enumerate(indices):
            if (self.bits >> j) & 1:
                bits |= 1 << p
        return LabelSet(bits, len(indices))

    def as_array(self) -> np.ndarray:
        return np.array([(self.bits >> j) & 1 for j in range(self.width)], dtype=np.uint8)


@dataclass(frozen=True, eq=False)
class SparseVector:
    """Sparse feature vector with strictly increasing indices and finite values."""

    indices: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        idx = np.asarray(self.indices, dtype=np.int64)
        val = np.asarray(self.values, dtype=np.float64)
        if idx.ndim != 1 or val.ndim != 1 or idx.size != val.size:
            raise ValueError("indices and values must be 1-d arrays of equal length")
        if idx.size:
            if idx[0] < 0 or np.any(np.diff(idx) <= 0):
                raise ValueError("sparse indices must be non-negative and strictly increasing")
            if not np.all(np.isfinite(val)):
                raise ValueError("sparse values must be finite")
        object.__setattr__(self, "indices", idx)
        object.__setattr__(self, "values", val)

    @classmethod
    def from_mapping(cls, mapping: Mapping[int, float]) -> "SparseVector":
        items = sorted((int(i), float(v)) for i, v in mapping.items())
        idx = np.array([i for i, _ in items], dtype=np.int64)
        val = np.array([v for _, v in items], dtype=np.float64)
        return cls(idx, val)

    @classmethod
    def empty(cls) -> "SparseVector":
        return cls(np.empty(0, dtype=np.int64), np.empty(0, dtype=np.float64))

    @property
    def nnz(self) -> int:
        return int(self.indices.size)

    def norm(self) -> float:
        return float(np.sqrt(np.dot(self.values, self.values)))

    def to_dense(self, dim: int) -> np.ndarray:
        out = np.zeros(dim, dtype=np.float64)
        keep = self.indices < dim
        out[self.indices[keep]] = self.values[keep]
        return out

    def equals(self, other: "SparseVector") -> bool:
        return bool(
            np.array_equal(self.indices, other.indices) and np.array_equal(self.values, other.values)
        )


class EncodedSequence(NamedTuple):
    """Fixed-width token-id sequence; ids at positions >= length are padding."""

    ids: np.ndarray
    length: int


@dataclass(frozen=True, eq=False)
class MultiLabelInstance:
    """One document: an opaque id, its label set, and at least one payload."""

    doc_id: str
    labels: LabelSet
    text: str | None = None
    features: SparseVector | None = None
    sequence: EncodedSequence | None = None

    def __post_init__(self):
        if self.text is None and self.features is None and self.sequence is None:
            raise ValueError(f"instance {self.doc_id!r} carries no payload")
        if self.sequence is not None:
            ids, length = self.sequence
            if not 0 <= length <= ids.size:
                raise ValueError(f"instance {self.doc_id!r}: sequence length outside bounds")
            if ids.size and ids.min() < 0:
                raise ValueError(f"instance {self.doc_id!r}: negative token id")


@dataclass(frozen=True, eq=False)
class MultiLabelDataset:
    """Instances plus their shared label space and sparse feature dimension."""

    space: LabelSpace
    instances: tuple[MultiLabelInstance, ...]
    feature_dimension: int = 0

    def __post_init__(self):
        object.__setattr__(self, "instances", tuple(self.instances))
        width = len(self.space)
        for inst in self.instances:
            if inst.labels.width != width:
                raise ValueError(f"instance {inst.doc_id!r}: label-set width {inst.labels.width} != |L|={width}")
            if inst.features is not None and inst.features.nnz:
                if int(inst.features.indices[-1]) >= self.feature_dimension:
                    raise ValueError(
                        f"instance {inst.doc_id!r}: feature index "
                        f"{int(inst.features.indices[-1])} >= dimension {self.feature_dimension}"
                    )

    def __len__(self) -> int:
        return len(self.instances)

    def __iter__(self) -> Iterator[MultiLabelInstance]:
        return iter(self.instances)

    def __getitem__(self, i: int) -> MultiLabelInstance:
        return self.instances[i]

    @property
    def has_features(self) -> bool:
        return bool(self.instances) and all(i.features is not None for i in self.instances)

    @property
    def has_sequences(self) -> bool:
        return bool(self.instances) and all(i.sequence is not None for i in self.instances)

    @property
    def has_text(self) -> bool:
        return bool(self.instances) and all(i.text is not None for i in self.instances)

    def labelsets(self) -> list[LabelSet]:
        return [inst.labels for inst in self.instances]

    def subset(self, indices: Sequence[int]) -> "MultiLabelDataset":
        picked = tuple(self.instances[int(i)] for i in indices)
        return MultiLabelDataset(self.space, picked, self.feature_dimension)

    def label_matrix(self) -> np.ndarray:
        if not self.instances:
            return np.zeros((0, len(self.space)), dtype=np.uint8)
        return np.stack([inst.labels.as_array() for inst in self.instances])

    def feature_matrix(self) -> sp.csr_matrix:
        if not self.has_features:
            raise ValueError("dataset has no sparse feature representation")
        indptr = [0]
        indices: list[np.ndarray] = []
        values: list[np.ndarray] = []
        for inst in self.instances:
            vec = inst.features
            indices.append(vec.indices)
            values.append(vec.values)
            indptr.append(indptr[-1] + vec.nnz)
        data = np.concatenate(values) if values else np.empty(0)
        cols = np.concatenate(indices) if indices else np.empty(0, dtype=np.int64)
        return sp.csr_matrix(
            (data, cols, np.asarray(indptr, dtype=np.int64)),
            shape=(len(self.instances), self.feature_dimension),
        )

    def sequences(self) -> tuple[np.ndarray, np.ndarray]:
        if not self.has_sequences:
            raise ValueError("dataset has no token-sequence representation")
        ids = np.stack([inst.sequence.ids for inst in self.instances])
        lengths = np.array([inst.sequence.length for inst in self.instances], dtype=np.int64)
        return ids, lengths


@dataclass(frozen=True)
class RawVotedDocument:
    """A document plus per-label user vote counts, before threshold filtering."""

    text: str
    votes: Mapping[str, int]

    def __post_init__(self):
        for name, count in self.votes.items():
            if not isinstance(name, str) or not name:
                raise ValueError("vote labels must be non-empty strings")
            if not isinstance(count, int) or isinstance(count, bool) or count < 0:
                raise ValueError(f"vote count for {name!r} must be a non-negative integer")
        object.__setattr__(self, "votes", dict(self.votes))

    @property
    def admissible(self) -> bool:
        return any(c > 0 for c in self.votes.values())


def load_jsonl(path: str | Path, space: LabelSpace | None = None) -> MultiLabelDataset:
    """Load a one-document-per-line JSONL corpus.

    Each line holds ``{"id": ..., "text": ... | "features": {...}, "labels": [...]}``.
    When ``space`` is omitted the label universe is the sorted union of observed
    labels; under a provided space an unknown label is an error.
    """
    path = Path(path)
    rows: list[tuple[str, str | None, SparseVector | None, list[str]]] = []
    max_feature = -1
    with path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusError(f"{path.name} line {lineno}: invalid JSON ({exc.msg})") from None
            if not isinstance(obj, dict):
                raise CorpusError(f"{path.name} line {lineno}: expected a JSON object")
            labels = obj.get("labels")
            if not isinstance(labels, list) or any(not isinstance(l, str) for l in labels):
                raise CorpusError(f"{path.name} line {lineno}: 'labels' must be a list of strings")
            text = obj.get("text")
            feats = obj.get("features")
            if text is None and feats is None:
                raise CorpusError(f"{path.name} line {lineno}: needs 'text' or 'features'")
            vec = None
            if feats is not None:
                if not isinstance(feats, dict):
                    raise CorpusError(f"{path.name} line {lineno}: 'features' must be an object")
                try:
                    mapping = {int(k): float(v) for k, v in feats.items()}
                except (TypeError, ValueError):
                    raise CorpusError(f"{path.name} line {lineno}: feature keys must be integers") from None
                if any(k < 0 for k in mapping):
                    raise CorpusError(f"{path.name} line {lineno}: negative feature index")
                if not all(np.isfinite(v) for v in mapping.values()):
                    raise CorpusError(f"{path.name} line {lineno}: non-finite feature value")
                vec = SparseVector.from_mapping(mapping)
                if vec.nnz:
                    max_feature = max(max_feature, int(vec.indices[-1]))
            doc_id = str(obj.get("id", f"doc-{lineno}"))
            if space is not None:
                for name in labels:
                    if name not in space:
                        raise CorpusError(f"{path.name} line {lineno}: unknown label {name!r}")
            rows.append((doc_id, text, vec, labels))
    if not rows:
        raise CorpusError(f"{path.name}: empty corpus")
    if space is None:
        space = LabelSpace.sorted_union(labels for _, _, _, labels in rows)
    instances = tuple(
        MultiLabelInstance(
            doc_id=doc_id,
            labels=LabelSet.from_names(space, labels),
            text=text,
            features=vec,
        )
        for doc_id, text, vec, labels in rows
    )
    return MultiLabelDataset(space, instances, feature_dimension=max_feature + 1)


def save_jsonl(ds: MultiLabelDataset, path: str | Path) -> None:
    """Write the canonical JSONL form; inverse of load_jsonl on (labels, features)."""
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        for inst in ds.instances:
            obj: dict = {"id": inst.doc_id}
            if inst.features is not None:
                obj["features"] = {
                    str(int(i)): float(v) for i, v in zip(inst.features.indices, inst.features.values)
                }
            if inst.text is not None:
                obj["text"] = inst.text
            obj["labels"] = list(inst.labels.names(ds.space))
            fh.write(json.dumps(obj, ensure_ascii=False) + "\n")


def load_votes(path: str | Path) -> tuple[list[RawVotedDocument], int]:
    """Load raw-vote JSONL (``{"text": ..., "votes": {label: count}}``).

    Returns the admissible documents plus the number of skipped rows
    (malformed JSON, missing fields, bad counts, or no positive vote).
    """
    path = Path(path)
    docs: list[RawVotedDocument] = []
    skipped = 0
    with path.open("r", encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                doc = RawVotedDocument(text=str(obj["text"]), votes=obj["votes"])
            except (json.JSONDecodeError, KeyError, TypeError, ValueError, AttributeError):
                skipped += 1
                continue
            if not doc.admissible:
                skipped += 1
                continue
            docs.append(doc)
    return docs, skipped


def vote_threshold_filter(
    docs: Sequence[RawVotedDocument], fraction: float, scope: str = "doc"
) -> list[RawVotedDocument]:
    """Drop labels whose vote share is strictly below ``fraction``.

    With ``scope="doc"`` the share is taken against each document's own vote
    total; with ``scope="corpus"`` a label is removed everywhere when its
    corpus-wide share falls below the fraction.  Documents left without labels
    are dropped; surviving counts are unchanged.  The comparison is on the
    ratio count/total so that an exact boundary share (e.g. 3 votes of 100 at
    fraction 0.03) is kept.
    """
    if not 0.0 < fraction < 1.0:
        raise ValueError(f"threshold fraction must lie in (0, 1), got {fraction}")
    if scope not in ("doc", "corpus"):
        raise ValueError(f"threshold scope must be 'doc' or 'corpus', got {scope!r}")

    if scope == "corpus":
        totals: dict[str, int] = {}
        for doc in docs:
            for name, count in doc.votes.items():
                totals[name] = totals.get(name, 0) + count
        grand = sum(totals.values())
        if grand <= 0:
            return []
        kept_labels = {name for name, total in totals.items() if not total / grand < fraction}
        out = []
        for doc in docs:
            votes = {n: c for n, c in doc.votes.items() if n in kept_labels and c > 0}
            if votes:
                out.append(RawVotedDocument(doc.text, votes))
        return out

    out = []
    for doc in docs:
        total = sum(doc.votes.values())
        if total <= 0:
            continue
        votes = {n: c for n, c in doc.votes.items() if c > 0 and not c / total < fraction}
        if votes:
            out.append(RawVotedDocument(doc.text, votes))
    return out


def label_cardinality(ds: MultiLabelDataset) -> float:
    """Mean number of labels per instance."""
    if not len(ds):
        raise ValueError("empty dataset")
    return sum(inst.labels.size for inst in ds) / len(ds)


def label_density(ds: MultiLabelDataset) -> float:
    """Label cardinality divided by the label-space size."""
    return label_cardinality(ds) / len(ds.space)


def class_distribution(ds: MultiLabelDataset) -> dict[str, int]:
    """Number of instances carrying each label; zero counts are included."""
    counts = dict.fromkeys(ds.space.names, 0)
    for inst in ds:
        for name in inst.labels.names(ds.space):
            counts[name] += 1
    return counts
