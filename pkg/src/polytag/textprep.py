"""Text preprocessing for news documents.

The normalization pipeline replaces links, emails, percentages, currency
symbols and numbers with sentinel tokens *before* casefolding so the patterns
survive, then lowercases, strips special characters, removes stopwords and
applies a pluggable stemmer.  On top of that sit the TF-IDF vectorizer and
the embedding/sequence encoding used by the recurrent classifier.
"""

from __future__ import annotations

import re
import unicodedata
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .corpus import (
    EncodedSequence,
    MultiLabelDataset,
    MultiLabelInstance,
    SparseVector,
)


@dataclass(frozen=True)
class ReplacementRule:
    """Pattern replaced by a sentinel token prior to normalization."""

    name: str
    pattern: re.Pattern
    token: str


# Percent precedes currency and number so "10%" never decomposes into a bare
# number plus a stray symbol.
DEFAULT_REPLACEMENTS: tuple[ReplacementRule, ...] = (
    ReplacementRule("url", re.compile(r"(?:https?://|www\.)\S+", re.IGNORECASE), "[URL]"),
    ReplacementRule("email", re.compile(r"[\w.+-]+@[\w-]+(?:\.[\w-]+)+"), "[EMAIL]"),
    ReplacementRule("percent", re.compile(r"\d+(?:[.,]\d+)?\s*%"), "[PCT]"),
    ReplacementRule("currency", re.compile(r"R\$|US\$|U\$|\$|€|£"), "[CUR]"),
    ReplacementRule("number", re.compile(r"\d+(?:[.,]\d+)*"), "[NUM]"),
)

_SENTINEL_FORM = re.compile(r"^\[[A-Z]+\]$")


def identity_stem(word: str) -> str:
    return word


def _strip_accents(word: str) -> str:
    decomposed = unicodedata.normalize("NFD", word)
    return "".join(ch for ch in decomposed if not unicodedata.combining(ch))


# Suffix classes applied in order: (suffix, replacement, minimum stem length).
_PT_PLURAL = (
    ("ões", "ão", 3), ("ães", "ão", 2), ("ais", "al", 2), ("éis", "el", 2),
    ("eis", "el", 2), ("óis", "ol", 2), ("ns", "m", 2), ("s", "", 2),
)
_PT_FEMININE = (
    ("eira", "eiro", 3), ("ira", "iro", 3), ("osa", "oso", 3),
    ("ica", "ico", 3), ("esa", "ês", 3), ("ona", "ão", 3),
)
_PT_DIMINUTIVE = (
    ("zinho", "", 2), ("zinha", "", 2), ("inho", "", 3), ("inha", "", 3),
)
_PT_VERB = (
    ("aríamos", "", 2), ("eríamos", "", 2), ("iríamos", "", 2),
    ("ássemos", "", 2), ("êssemos", "", 2), ("íssemos", "", 2),
    ("aremos", "", 2), ("eremos", "", 2), ("iremos", "", 2),
    ("ávamos", "", 2), ("ando", "", 2), ("endo", "", 2), ("indo", "", 2),
    ("aram", "", 2), ("eram", "", 2), ("iram", "", 2), ("avam", "", 2),
    ("amos", "", 2), ("emos", "", 2), ("imos", "", 2),
    ("aria", "", 2), ("eria", "", 2), ("iria", "", 2),
    ("asse", "", 2), ("esse", "", 2), ("isse", "", 2),
    ("ava", "", 2), ("ará", "", 2), ("erá", "", 2), ("irá", "", 2),
    ("iam", "", 2), ("am", "", 2), ("em", "", 3), ("ou", "", 2),
    ("ei", "", 2), ("ia", "", 2), ("ar", "", 2), ("er", "", 2), ("ir", "", 2),
)


def _apply_suffix_class(word: str, rules: tuple[tuple[str, str, int], ...]) -> str:
    for suffix, repl, min_stem in rules:
        if word.endswith(suffix) and len(word) - len(suffix) >= min_stem:
            return word[: len(word) - len(suffix)] + repl
    return word


def portuguese_stem(word: str) -> str:
    """Lightweight Portuguese suffix stripper (plural, feminine, diminutive, verb)."""
    word = _apply_suffix_class(word, _PT_PLURAL)
    if word.endswith("a") or word.endswith("ã"):
        word = _apply_suffix_class(word, _PT_FEMININE)
    word = _apply_suffix_class(word, _PT_DIMINUTIVE)
    word = _apply_suffix_class(word, _PT_VERB)
    if len(word) >= 4 and word[-1] in "aeo":
        word = word[:-1]
    return _strip_accents(word)


STEMMERS: dict[str, Callable[[str], str]] = {
    "identity": identity_stem,
    "portuguese": portuguese_stem,
}


@dataclass(frozen=True)
class PipelineConfig:
    """Normalization settings; the defaults mirror the news-preprocessing recipe."""

    lowercase: bool = True
    strip_special: bool = True
    stopwords: frozenset[str] = frozenset()
    stemmer: str = "identity"
    replacements: tuple[ReplacementRule, ...] = DEFAULT_REPLACEMENTS
    max_sequence_length: int = 50

    def __post_init__(self):
        object.__setattr__(self, "stopwords", frozenset(self.stopwords))
        tokens = [rule.token for rule in self.replacements]
        if len(set(tokens)) != len(tokens):
            raise ValueError("sentinel tokens must be distinct")
        for token in tokens:
            if not _SENTINEL_FORM.match(token):
                raise ValueError(f"sentinel {token!r} must be a bracketed uppercase form")
        if self.stemmer not in STEMMERS:
            raise ValueError(f"unknown stemmer {self.stemmer!r}; choose from {sorted(STEMMERS)}")
        if self.max_sequence_length < 1:
            raise ValueError("max_sequence_length must be >= 1")

    @property
    def stem(self) -> Callable[[str], str]:
        return STEMMERS[self.stemmer]


def load_stopwords(path: str | Path) -> frozenset[str]:
    """One token per line, UTF-8; blank lines ignored."""
    words = set()
    with Path(path).open("r", encoding="utf-8") as fh:
        for line in fh:
            word = line.strip()
            if word:
                words.add(word)
    return frozenset(words)


def tokenize_and_normalize(text: str, cfg: PipelineConfig) -> list[str]:
    """Apply replacements, casefold, strip specials, drop stopwords, then stem.

    Sentinel tokens pass through every later stage untouched.  Degenerate
    input yields an empty list.
    """
    for rule in cfg.replacements:
        text = rule.pattern.sub(f" {rule.token} ", text)
    sentinels = {rule.token for rule in cfg.replacements}
    stem = cfg.stem
    tokens: list[str] = []
    for raw in text.split():
        if raw in sentinels:
            tokens.append(raw)
            continue
        tok = raw.lower() if cfg.lowercase else raw
        if cfg.strip_special:
            tok = "".join(ch for ch in tok if ch.isalnum())
        if not tok or tok in cfg.stopwords:
            continue
        tokens.append(stem(tok))
    return tokens


@dataclass(frozen=True, eq=False)
class Vocabulary:
    """Terms indexed densely in lexicographic order, with document frequencies."""

    terms: tuple[str, ...]
    doc_frequency: np.ndarray
    n_docs: int

    def __post_init__(self):
        df = np.asarray(self.doc_frequency, dtype=np.int64)
        if df.size != len(self.terms):
            raise ValueError("doc_frequency length must match terms")
        if df.size and (df.min() < 1 or df.max() > self.n_docs):
            raise ValueError("document frequencies must lie in 1..n_docs")
        object.__setattr__(self, "doc_frequency", df)

    @cached_property
    def index(self) -> dict[str, int]:
        return {t: i for i, t in enumerate(self.terms)}

    def __len__(self) -> int:
        return len(self.terms)

    def __contains__(self, term: object) -> bool:
        return term in self.index


def fit_vocabulary(docs: Sequence[Sequence[str]], min_df: int = 1) -> Vocabulary:
    """Collect terms with document frequency >= min_df, lexicographically indexed."""
    if min_df < 1:
        raise ValueError("min_df must be >= 1")
    df: dict[str, int] = {}
    for doc in docs:
        for term in set(doc):
            df[term] = df.get(term, 0) + 1
    if not df:
        raise ValueError("empty corpus: no terms to index")
    kept = sorted(t for t, c in df.items() if c >= min_df)
    if not kept:
        raise ValueError(f"no term reaches document frequency {min_df}")
    return Vocabulary(
        terms=tuple(kept),
        doc_frequency=np.array([df[t] for t in kept], dtype=np.int64),
        n_docs=len(docs),
    )


def tfidf_vectorize(doc: Sequence[str], vocab: Vocabulary) -> SparseVector:
    """Raw term count times ln(N/df), L2-normalized when nonzero.

    Out-of-vocabulary terms are ignored; a term present in every document
    weighs exactly zero and is not stored.
    """
    counts: dict[int, int] = {}
    index = vocab.index
    for term in doc:
        j = index.get(term)
        if j is not None:
            counts[j] = counts.get(j, 0) + 1
    if not counts:
        return SparseVector.empty()
    idf = np.log(vocab.n_docs / vocab.doc_frequency)
    items = sorted(counts.items())
    idx = np.array([j for j, _ in items], dtype=np.int64)
    val = np.array([c for _, c in items], dtype=np.float64) * idf[idx]
    nonzero = val != 0.0
    idx, val = idx[nonzero], val[nonzero]
    norm = np.sqrt(np.dot(val, val))
    if norm > 0.0:
        val = val / norm
    return SparseVector(idx, val)


@dataclass(frozen=True, eq=False)
class EmbeddingTable:
    """Word vectors with a zero padding row (id 0) and a mean out-of-vocabulary row.

    Row layout: index 0 is padding, words occupy 1..V, and V+1 is the OOV row.
    """

    word_ids: Mapping[str, int]
    vectors: np.ndarray

    def __post_init__(self):
        vec = np.asarray(self.vectors, dtype=np.float64)
        if vec.ndim != 2:
            raise ValueError("vectors must be a 2-d matrix")
        if not np.all(np.isfinite(vec)):
            raise ValueError("embedding values must be finite")
        object.__setattr__(self, "vectors", vec)

    @property
    def dim(self) -> int:
        return int(self.vectors.shape[1])

    @property
    def pad_id(self) -> int:
        return 0

    @property
    def oov_id(self) -> int:
        return int(self.vectors.shape[0] - 1)

    def id_of(self, word: str) -> int:
        return self.word_ids.get(word, self.oov_id)

    def lookup(self, word: str) -> np.ndarray:
        return self.vectors[self.id_of(word)]

    @classmethod
    def from_mapping(cls, mapping: Mapping[str, Sequence[float]]) -> "EmbeddingTable":
        if not mapping:
            raise ValueError("embedding mapping is empty")
        words = list(mapping)
        rows = np.asarray([mapping[w] for w in words], dtype=np.float64)
        if rows.ndim != 2:
            raise ValueError("all embedding rows must share one dimension")
        dim = rows.shape[1]
        vectors = np.zeros((len(words) + 2, dim), dtype=np.float64)
        vectors[1 : len(words) + 1] = rows
        vectors[-1] = rows.mean(axis=0)
        ids = {w: i + 1 for i, w in enumerate(words)}
        return cls(ids, vectors)


def load_word2vec_text(path: str | Path) -> EmbeddingTable:
    """Parse the word2vec text format: a "count dim" header then one word per line."""
    path = Path(path)
    with path.open("r", encoding="utf-8") as fh:
        header = fh.readline().split()
        if len(header) != 2:
            raise ValueError(f"{path.name} line 1: expected 'count dim' header")
        try:
            count, dim = int(header[0]), int(header[1])
        except ValueError:
            raise ValueError(f"{path.name} line 1: expected 'count dim' header") from None
        if count < 1 or dim < 1:
            raise ValueError(f"{path.name} line 1: count and dim must be positive")
        ids: dict[str, int] = {}
        rows: list[np.ndarray] = []
        lineno = 1
        n_data = 0
        for line in fh:
            lineno += 1
            parts = [p for p in line.split() if p]
            if not parts:
                continue
            n_data += 1
            word, raw = parts[0], parts[1:]
            if len(raw) != dim:
                raise ValueError(f"{path.name} line {lineno}: expected {dim} values, got {len(raw)}")
            try:
                vec = np.array(raw, dtype=np.float64)
            except ValueError:
                raise ValueError(f"{path.name} line {lineno}: non-numeric value") from None
            if not np.all(np.isfinite(vec)):
                raise ValueError(f"{path.name} line {lineno}: non-finite value")
            if word in ids:
                continue
            ids[word] = len(rows) + 1
            rows.append(vec)
        if n_data != count:
            raise ValueError(f"{path.name}: header promises {count} rows, found {n_data}")
        if not rows:
            raise ValueError(f"{path.name}: no embedding rows")
    matrix = np.stack(rows)
    vectors = np.zeros((len(rows) + 2, dim), dtype=np.float64)
    vectors[1 : len(rows) + 1] = matrix
    vectors[-1] = matrix.mean(axis=0)
    return EmbeddingTable(ids, vectors)


def encode_sequence(doc: Sequence[str], table: EmbeddingTable, max_len: int) -> EncodedSequence:
    """Map the first max_len tokens to embedding row ids, zero-padded to max_len."""
    if max_len < 1:
        raise ValueError("max_len must be >= 1")
    ids = np.zeros(max_len, dtype=np.int64)
    length = min(len(doc), max_len)
    for i in range(length):
        ids[i] = table.id_of(doc[i])
    return EncodedSequence(ids=ids, length=length)


def vectorize_dataset(
    ds: MultiLabelDataset,
    cfg: PipelineConfig,
    min_df: int = 1,
    vocab: Vocabulary | None = None,
) -> tuple[MultiLabelDataset, Vocabulary]:
    """Tokenize every text instance and attach TF-IDF feature vectors."""
    if not ds.has_text:
        raise ValueError("dataset has no text to vectorize")
    docs = [tokenize_and_normalize(inst.text, cfg) for inst in ds]
    if vocab is None:
        vocab = fit_vocabulary(docs, min_df=min_df)
    instances = tuple(
        MultiLabelInstance(
            doc_id=inst.doc_id,
            labels=inst.labels,
            text=inst.text,
            features=tfidf_vectorize(doc, vocab),
        )
        for inst, doc in zip(ds, docs)
    )
    return MultiLabelDataset(ds.space, instances, feature_dimension=len(vocab)), vocab


def encode_dataset(
    ds: MultiLabelDataset,
    table: EmbeddingTable,
    max_len: int,
    cfg: PipelineConfig | None = None,
) -> MultiLabelDataset:
    """Attach fixed-width token-id sequences for the recurrent path.

    By default the words are left as-is apart from lowercasing (whitespace
    split); pass a PipelineConfig to reuse the full normalization pipeline.
    """
    if not ds.has_text:
        raise ValueError("dataset has no text to encode")
    instances = []
    for inst in ds:
        tokens = tokenize_and_normalize(inst.text, cfg) if cfg else inst.text.lower().split()
        instances.append(
            MultiLabelInstance(
                doc_id=inst.doc_id,
                labels=inst.labels,
                text=inst.text,
                features=inst.features,
                sequence=encode_sequence(tokens, table, max_len),
            )
        )
    return MultiLabelDataset(ds.space, tuple(instances), feature_dimension=ds.feature_dimension)
