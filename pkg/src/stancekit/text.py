"""Tokenization, frequency-ranked vocabularies, TF blocks, TF-IDF cosine.

All functions are pure and deterministic; vocabularies and IDF tables are
immutable after construction and safe to share between workers.
"""

from __future__ import annotations

import math
import re
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, NamedTuple, Sequence

import numpy as np

from .corpus import Corpus, Instance

#: Lowercase word tokens, in text order.
TokenList = list[str]

_TOKEN_RE = re.compile(r"[^\W_]+", re.UNICODE)


def tokenize(text: str) -> TokenList:
    """Lowercase and split on any non-alphanumeric character.

    >>> tokenize("it's a-b 42")
    ['it', 's', 'a', 'b', '42']
    """
    return _TOKEN_RE.findall(text.lower())


@dataclass(frozen=True)
class Vocabulary:
    """Ordered list of distinct terms with a positional index."""

    terms: tuple[str, ...]
    source: str = "shared"

    def __post_init__(self):
        object.__setattr__(self, "index", {t: i for i, t in enumerate(self.terms)})

    def __len__(self) -> int:
        return len(self.terms)

    def __contains__(self, term: str) -> bool:
        return term in self.index


def build_vocabulary(
    token_lists: Iterable[TokenList],
    capacity: int,
    stopwords: frozenset[str] | set[str] = frozenset(),
    source: str = "shared",
) -> Vocabulary:
    """The `capacity` most frequent non-stopword terms, ties lexicographic."""
    if capacity < 1:
        raise ValueError(f"vocabulary capacity must be >= 1, got {capacity}")
    counts = Counter()
    for tokens in token_lists:
        counts.update(tokens)
    ranked = sorted(
        (t for t in counts if t not in stopwords),
        key=lambda t: (-counts[t], t),
    )
    return Vocabulary(terms=tuple(ranked[:capacity]), source=source)


def dump_vocabulary(vocab: Vocabulary, path: str | Path) -> None:
    """One term per line, order significant."""
    Path(path).write_text("".join(t + "\n" for t in vocab.terms), encoding="utf-8")


def load_vocabulary(path: str | Path, source: str = "shared") -> Vocabulary:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    return Vocabulary(terms=tuple(t for t in lines if t), source=source)


def tf_counts(tokens: TokenList, vocab: Vocabulary) -> dict[int, int]:
    """Sparse raw term counts keyed by vocabulary position; OOV ignored."""
    index = vocab.index
    out: dict[int, int] = {}
    for tok in tokens:
        i = index.get(tok)
        if i is not None:
            out[i] = out.get(i, 0) + 1
    return out


def tf_vector(tokens: TokenList, vocab: Vocabulary) -> np.ndarray:
    """Dense raw-count TF vector over the vocabulary."""
    vec = np.zeros(len(vocab), dtype=np.float64)
    for i, c in tf_counts(tokens, vocab).items():
        vec[i] = c
    return vec


@dataclass(frozen=True)
class IdfTable:
    """Smoothed inverse document frequencies aligned with a vocabulary.

    idf(t) = max(0, ln(N / (1 + df(t)))), so a term present in every
    document (or absent from the vocabulary) never gets negative weight.
    """

    vocab: Vocabulary
    values: np.ndarray
    document_count: int

    def idf(self, term: str) -> float:
        i = self.vocab.index.get(term)
        return float(self.values[i]) if i is not None else 0.0


def build_idf(documents: Iterable[TokenList], vocab: Vocabulary) -> IdfTable:
    """Document frequencies over `documents`, one set-membership per doc."""
    df = np.zeros(len(vocab), dtype=np.int64)
    n_docs = 0
    index = vocab.index
    for tokens in documents:
        n_docs += 1
        for i in {index[t] for t in set(tokens) if t in index}:
            df[i] += 1
    if n_docs < 1:
        raise ValueError("idf requires at least one document")
    values = np.maximum(0.0, np.log(n_docs / (1.0 + df)))
    return IdfTable(vocab=vocab, values=values, document_count=n_docs)


def _weighted(tokens: TokenList, vocab: Vocabulary, idf: IdfTable) -> dict[int, float]:
    return {i: c * idf.values[i] for i, c in tf_counts(tokens, vocab).items()}


def tfidf_cosine(
    headline_tokens: TokenList,
    body_tokens: TokenList,
    vocab: Vocabulary,
    idf: IdfTable,
) -> float:
    """Cosine of the two TF-IDF vectors over the shared vocabulary.

    Returns 0.0 when either side has zero norm (no weighted overlap with the
    vocabulary); otherwise lies in [0, 1] since all weights are non-negative.
    """
    a = _weighted(headline_tokens, vocab, idf)
    b = _weighted(body_tokens, vocab, idf)
    norm_a = math.sqrt(sum(v * v for v in a.values()))
    norm_b = math.sqrt(sum(v * v for v in b.values()))
    if norm_a == 0.0 or norm_b == 0.0:
        return 0.0
    if len(b) < len(a):
        a, b = b, a
    dot = sum(v * b[i] for i, v in a.items() if i in b)
    return dot / (norm_a * norm_b)


class BlockSlice(NamedTuple):
    """One contiguous named block inside a feature vector."""

    name: str
    offset: int
    length: int


@dataclass(frozen=True)
class FeatureVector:
    """Dense feature vector with a recorded block layout."""

    values: np.ndarray
    layout: tuple[BlockSlice, ...]

    def __post_init__(self):
        expected = 0
        for block in self.layout:
            if block.offset != expected:
                raise ValueError(f"block {block.name!r} not contiguous at {expected}")
            expected += block.length
        if expected != len(self.values):
            raise ValueError(f"layout covers {expected} of {len(self.values)} values")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("feature vector contains non-finite values")

    def block(self, name: str) -> np.ndarray:
        for b in self.layout:
            if b.name == name:
                return self.values[b.offset : b.offset + b.length]
        raise KeyError(name)


def concat_blocks(parts: Sequence[tuple[str, np.ndarray]]) -> FeatureVector:
    """Assemble named value arrays into a FeatureVector with layout."""
    names = [name for name, _ in parts]
    if len(set(names)) != len(names):
        raise ValueError(f"duplicate block names in {names}")
    layout = []
    offset = 0
    for name, values in parts:
        layout.append(BlockSlice(name, offset, len(values)))
        offset += len(values)
    values = np.concatenate([v for _, v in parts]) if parts else np.zeros(0)
    return FeatureVector(values=values.astype(np.float64), layout=tuple(layout))


def baseline_features(
    instance: Instance,
    corpus: Corpus,
    headline_vocab: Vocabulary,
    body_vocab: Vocabulary,
    shared_vocab: Vocabulary,
    idf: IdfTable,
) -> FeatureVector:
    """TF(headline) + TF(body) + TF-IDF cosine, in that fixed block order."""
    headline_tokens = tokenize(instance.headline)
    body_tokens = tokenize(corpus.body_text(instance.body_id))
    cos = tfidf_cosine(headline_tokens, body_tokens, shared_vocab, idf)
    return concat_blocks(
        [
            ("tf_headline", tf_vector(headline_tokens, headline_vocab)),
            ("tf_body", tf_vector(body_tokens, body_vocab)),
            ("tfidf_cos", np.array([cos])),
        ]
    )
