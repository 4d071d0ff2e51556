"""Collapsed-Gibbs LDA and topic-based resolution ranking."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Mapping, Sequence

import numba
import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .errors import EmptyInputError


@numba.njit(cache=True)
def _gibbs_sweep(words, docs, z, n_dk, n_wk, n_k, alpha, beta, v_beta, u):
    K = n_k.shape[0]
    p = np.empty(K)
    for i in range(words.shape[0]):
        w = words[i]
        d = docs[i]
        k = z[i]
        n_dk[d, k] -= 1
        n_wk[w, k] -= 1
        n_k[k] -= 1
        total = 0.0
        for t in range(K):
            p[t] = (n_dk[d, t] + alpha) * (n_wk[w, t] + beta) / (n_k[t] + v_beta)
            total += p[t]
        r = u[i] * total
        acc = 0.0
        new = K - 1
        for t in range(K):
            acc += p[t]
            if r < acc:
                new = t
                break
        z[i] = new
        n_dk[d, new] += 1
        n_wk[w, new] += 1
        n_k[new] += 1


@numba.njit(cache=True)
def _fold_in(words, z, n_wk, n_k, alpha, beta, v_beta, u):
    K = n_k.shape[0]
    n_dk = np.zeros(K, dtype=np.int64)
    for i in range(words.shape[0]):
        n_dk[z[i]] += 1
    p = np.empty(K)
    for s in range(u.shape[0]):
        for i in range(words.shape[0]):
            w = words[i]
            n_dk[z[i]] -= 1
            total = 0.0
            for t in range(K):
                p[t] = (n_dk[t] + alpha) * (n_wk[w, t] + beta) / (n_k[t] + v_beta)
                total += p[t]
            r = u[s, i] * total
            acc = 0.0
            new = K - 1
            for t in range(K):
                acc += p[t]
                if r < acc:
                    new = t
                    break
            z[i] = new
            n_dk[new] += 1
    return n_dk


@dataclass(frozen=True)
class LdaModel:
    K: int
    alpha: float
    beta: float
    topic_word_counts: np.ndarray  # K x V
    topic_totals: np.ndarray  # K
    doc_topic_counts: np.ndarray  # D x K
    seed: int = 0
    sweeps: int = 0
    vocab_ref: str = ""

    @property
    def V(self) -> int:
        return self.topic_word_counts.shape[1]

    @property
    def n_tokens(self) -> int:
        return int(self.topic_totals.sum())

    def word_topic(self) -> np.ndarray:
        wk = getattr(self, "_wk", None)
        if wk is None:
            wk = np.ascontiguousarray(self.topic_word_counts.T)
            object.__setattr__(self, "_wk", wk)
        return wk

    def topic_word_dist(self) -> np.ndarray:
        counts = self.topic_word_counts + self.beta
        return counts / counts.sum(axis=1, keepdims=True)

    def top_words(self, k: int, n: int = 20) -> list[int]:
        """Term ids of topic ``k`` by descending count, ties by ascending id."""
        row = self.topic_word_counts[k]
        order = np.lexsort((np.arange(row.size), -row))
        return [int(i) for i in order[:n] if row[i] > 0]


def _flatten(docs: Sequence[Sequence[int]]):
    lengths = np.fromiter((len(d) for d in docs), dtype=np.int64, count=len(docs))
    words = np.fromiter((w for d in docs for w in d), dtype=np.int64, count=int(lengths.sum()))
    doc_of = np.repeat(np.arange(len(docs), dtype=np.int64), lengths)
    return words, doc_of


def lda_fit(
    docs: Sequence[Sequence[int]],
    K: int,
    alpha: float | None = None,
    beta: float = 0.01,
    sweeps: int = 500,
    seed: int = 0,
    V: int | None = None,
    callback: Callable[[int, np.ndarray, np.ndarray, np.ndarray], None] | None = None,
    vocab_ref: str = "",
) -> LdaModel:
    """Collapsed Gibbs sampling over token-id documents.

    ``alpha`` defaults to ``50 / K``. ``callback(sweep, word_topic, topic_totals,
    doc_topic)`` runs after each sweep with the live count arrays.
    """
    if K < 1:
        raise ValueError(f"K must be >= 1, got {K}")
    if len(docs) == 0:
        raise EmptyInputError("LDA needs at least one document")
    alpha = 50.0 / K if alpha is None else float(alpha)
    words, doc_of = _flatten(docs)
    if V is None:
        V = int(words.max()) + 1 if words.size else 1
    if words.size and (words.min() < 0 or words.max() >= V):
        raise ValueError("token ids must lie in [0, V)")
    rng = np.random.default_rng(seed)
    z = rng.integers(K, size=words.size).astype(np.int64)
    n_dk = np.zeros((len(docs), K), dtype=np.int64)
    n_wk = np.zeros((V, K), dtype=np.int64)
    np.add.at(n_dk, (doc_of, z), 1)
    np.add.at(n_wk, (words, z), 1)
    n_k = n_wk.sum(axis=0)
    v_beta = V * beta
    for s in range(sweeps):
        _gibbs_sweep(words, doc_of, z, n_dk, n_wk, n_k, alpha, beta, v_beta, rng.random(words.size))
        if callback is not None:
            callback(s, n_wk, n_k, n_dk)
    return LdaModel(
        K=K,
        alpha=alpha,
        beta=float(beta),
        topic_word_counts=np.ascontiguousarray(n_wk.T),
        topic_totals=n_k.copy(),
        doc_topic_counts=n_dk,
        seed=seed,
        sweeps=sweeps,
        vocab_ref=vocab_ref,
    )


def dominant_topic(model: LdaModel, doc_index: int) -> int:
    if not 0 <= doc_index < model.doc_topic_counts.shape[0]:
        raise IndexError(f"doc_index {doc_index} out of range")
    return int(np.argmax(model.doc_topic_counts[doc_index] + model.alpha))


def dominant_topics(model: LdaModel) -> np.ndarray:
    return np.argmax(model.doc_topic_counts + model.alpha, axis=1)


def lda_infer(model: LdaModel, new_doc: Sequence[int], sweeps: int = 50, seed: int = 0) -> np.ndarray:
    """Fold-in Gibbs with the trained topic-word counts held fixed."""
    K = model.K
    words = np.asarray([w for w in new_doc if 0 <= w < model.V], dtype=np.int64)
    if words.size == 0:
        return np.full(K, 1.0 / K)
    rng = np.random.default_rng(seed)
    z = rng.integers(K, size=words.size).astype(np.int64)
    u = rng.random((sweeps, words.size))
    n_dk = _fold_in(words, z, model.word_topic(), model.topic_totals, model.alpha, model.beta, model.V * model.beta, u)
    theta = (n_dk + model.alpha) / (words.size + K * model.alpha)
    return theta / theta.sum()


@dataclass(frozen=True)
class TopicResolutionTable:
    rows: tuple[tuple[tuple[str, int, float], ...], ...]

    @property
    def resolution_ids(self) -> list[str]:
        return sorted({rid for row in self.rows for rid, _, _ in row})

    def share_matrix(self, label_space: Sequence[str]) -> np.ndarray:
        col = {rid: j for j, rid in enumerate(label_space)}
        S = np.zeros((len(self.rows), len(label_space)))
        for k, row in enumerate(self.rows):
            for rid, _, share in row:
                if rid in col:
                    S[k, col[rid]] = share
        return S

    def to_list(self) -> list:
        return [[[rid, n, s] for rid, n, s in row] for row in self.rows]

    @classmethod
    def from_list(cls, rows) -> "TopicResolutionTable":
        return cls(tuple(tuple((str(r), int(n), float(s)) for r, n, s in row) for row in rows))


def build_topic_resolution_table(model: LdaModel, resolution_ids: Sequence[str]) -> TopicResolutionTable:
    """Rank each topic's member-ticket resolution ids by frequency.

    ``resolution_ids[d]`` labels training document ``d``; membership is the
    document's dominant topic.
    """
    if len(resolution_ids) != model.doc_topic_counts.shape[0]:
        raise ValueError("one resolution id per training document required")
    topics = dominant_topics(model)
    counts: list[dict[str, int]] = [{} for _ in range(model.K)]
    for k, rid in zip(topics, resolution_ids):
        counts[k][rid] = counts[k].get(rid, 0) + 1
    rows = []
    for c in counts:
        total = sum(c.values())
        ranked = sorted(c.items(), key=lambda kv: (-kv[1], kv[0]))
        rows.append(tuple((rid, n, n / total) for rid, n in ranked))
    return TopicResolutionTable(tuple(rows))


def rank_scores(scores: Mapping[str, float]) -> list[tuple[str, float]]:
    return sorted(scores.items(), key=lambda kv: (-kv[1], kv[0]))


def lda_predict(
    model: LdaModel,
    table: TopicResolutionTable,
    new_doc: Sequence[int],
    sweeps: int = 50,
    seed: int = 0,
) -> list[tuple[str, float]]:
    """score(r) = sum_k theta_k * share(r | k), ranked."""
    theta = lda_infer(model, new_doc, sweeps, seed)
    return lda_scores_from_theta(theta, table)


def lda_scores_from_theta(theta: np.ndarray, table: TopicResolutionTable) -> list[tuple[str, float]]:
    scores: dict[str, float] = {}
    for k, row in enumerate(table.rows):
        for rid, _, share in row:
            scores[rid] = scores.get(rid, 0.0) + float(theta[k]) * share
    return rank_scores(scores)


class GibbsLDA(TransformerMixin, BaseEstimator):
    """Estimator wrapper; ``transform`` returns fold-in topic distributions."""

    def __init__(self, n_topics=10, alpha=None, beta=0.01, sweeps=500, infer_sweeps=50, seed=0):
        self.n_topics = n_topics
        self.alpha = alpha
        self.beta = beta
        self.sweeps = sweeps
        self.infer_sweeps = infer_sweeps
        self.seed = seed

    def fit(self, X, y=None, V=None):
        self.model_ = lda_fit(list(X), self.n_topics, self.alpha, self.beta, self.sweeps, self.seed, V=V)
        return self

    def transform(self, X):
        check_is_fitted(self, "model_")
        return np.array([lda_infer(self.model_, d, self.infer_sweeps, self.seed) for d in X])
