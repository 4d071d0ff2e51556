"""Document-frequency vocabulary and TF-IDF vectors."""
from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np
import scipy.sparse as sp
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ..errors import FilterTooStrictError

SEP = "_"


@dataclass(frozen=True)
class NgramConfig:
    min_n: int = 1
    max_n: int = 1

    def __post_init__(self):
        if not 1 <= self.min_n <= self.max_n:
            raise ValueError(f"invalid n-gram range ({self.min_n}, {self.max_n})")


def ngrams(tokens: Sequence[str], config: NgramConfig = NgramConfig()) -> list[str]:
    out = []
    for n in range(config.min_n, config.max_n + 1):
        out.extend(SEP.join(tokens[i : i + n]) for i in range(len(tokens) - n + 1))
    return out


@dataclass(frozen=True)
class Vocabulary:
    terms: tuple[str, ...]
    doc_freq: tuple[int, ...]
    n_docs: int
    ngram: NgramConfig = NgramConfig()
    min_df: int = 1
    max_df_ratio: float = 1.0
    term_to_id: Mapping[str, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "term_to_id", {t: i for i, t in enumerate(self.terms)})

    def __len__(self):
        return len(self.terms)

    def __contains__(self, term):
        return term in self.term_to_id

    @property
    def idf(self) -> np.ndarray:
        df = np.asarray(self.doc_freq, dtype=np.float64)
        return np.log((1.0 + self.n_docs) / (1.0 + df)) + 1.0

    def ids(self, tokens: Sequence[str]) -> list[int]:
        """Unigram token ids, skipping tokens outside the vocabulary."""
        t2i = self.term_to_id
        return [t2i[t] for t in tokens if t in t2i]

    def to_dict(self) -> dict:
        return {
            "terms": list(self.terms),
            "doc_freq": list(self.doc_freq),
            "n_docs": self.n_docs,
            "ngram": [self.ngram.min_n, self.ngram.max_n],
            "min_df": self.min_df,
            "max_df_ratio": self.max_df_ratio,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "Vocabulary":
        return cls(
            terms=tuple(d["terms"]),
            doc_freq=tuple(int(x) for x in d["doc_freq"]),
            n_docs=int(d["n_docs"]),
            ngram=NgramConfig(*d["ngram"]),
            min_df=int(d["min_df"]),
            max_df_ratio=float(d["max_df_ratio"]),
        )


@dataclass(frozen=True)
class SparseVector:
    indices: tuple[int, ...]
    weights: tuple[float, ...]
    dim: int

    @property
    def entries(self) -> list[tuple[int, float]]:
        return list(zip(self.indices, self.weights))

    def to_dense(self) -> np.ndarray:
        out = np.zeros(self.dim)
        out[list(self.indices)] = self.weights
        return out

    def norm(self) -> float:
        return math.sqrt(sum(w * w for w in self.weights))


def build_vocab(
    docs: Sequence[Sequence[str]],
    min_df: int = 2,
    max_df_ratio: float = 0.5,
    ngram: NgramConfig = NgramConfig(),
) -> Vocabulary:
    """Keep terms with ``min_df <= df <= max_df_ratio * n_docs``, ids in lexicographic order."""
    if not docs:
        raise ValueError("cannot build a vocabulary from zero documents")
    if min_df < 1 or not 0.0 < max_df_ratio <= 1.0:
        raise ValueError(f"invalid thresholds min_df={min_df}, max_df_ratio={max_df_ratio}")
    df = Counter()
    for doc in docs:
        df.update(set(ngrams(doc, ngram)))
    ceiling = max_df_ratio * len(docs)
    kept = sorted(t for t, c in df.items() if min_df <= c <= ceiling)
    if not kept:
        raise FilterTooStrictError(
            f"empty vocabulary with min_df={min_df}, max_df_ratio={max_df_ratio} over {len(docs)} docs"
        )
    return Vocabulary(tuple(kept), tuple(df[t] for t in kept), len(docs), ngram, min_df, max_df_ratio)


def tfidf(doc: Sequence[str], vocab: Vocabulary) -> SparseVector:
    """Raw-count tf times smoothed idf, L2-normalized; OOV terms ignored."""
    t2i = vocab.term_to_id
    counts = Counter(t2i[t] for t in ngrams(doc, vocab.ngram) if t in t2i)
    if not counts:
        return SparseVector((), (), len(vocab))
    idx = sorted(counts)
    idf = vocab.idf
    w = np.array([counts[i] * idf[i] for i in idx])
    w /= np.sqrt(np.dot(w, w))
    return SparseVector(tuple(idx), tuple(float(x) for x in w), len(vocab))


def tfidf_matrix(docs: Iterable[Sequence[str]], vocab: Vocabulary) -> sp.csr_matrix:
    rows, cols, vals = [], [], []
    n = 0
    for r, doc in enumerate(docs):
        v = tfidf(doc, vocab)
        rows.extend([r] * len(v.indices))
        cols.extend(v.indices)
        vals.extend(v.weights)
        n = r + 1
    return sp.csr_matrix((vals, (rows, cols)), shape=(n, len(vocab)), dtype=np.float64)


class TfidfEncoder(BaseEstimator, TransformerMixin):
    """Estimator wrapper: fit a :class:`Vocabulary` on token lists, emit CSR TF-IDF rows."""

    def __init__(self, min_df=2, max_df_ratio=0.5, ngram_range=(1, 1)):
        self.min_df = min_df
        self.max_df_ratio = max_df_ratio
        self.ngram_range = ngram_range

    def fit(self, X, y=None):
        self.vocabulary_ = build_vocab(
            list(X), self.min_df, self.max_df_ratio, NgramConfig(*self.ngram_range)
        )
        return self

    def transform(self, X):
        check_is_fitted(self, "vocabulary_")
        return tfidf_matrix(X, self.vocabulary_)
