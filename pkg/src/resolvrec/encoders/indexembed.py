"""Issue/resolution index embeddings trained with negative sampling."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numba
import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ..errors import InfeasibleError


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def indexembed_loss(u, v_pos, v_negs):
    """-ln s(u.v_pos) - sum_j ln s(-u.v_j), with gradients for u, v_pos, each v_j."""
    u = np.asarray(u, dtype=np.float64)
    v_pos = np.asarray(v_pos, dtype=np.float64)
    v_negs = np.atleast_2d(np.asarray(v_negs, dtype=np.float64))
    s_pos = float(u @ v_pos)
    s_neg = v_negs @ u
    loss = np.logaddexp(0.0, -s_pos) + np.logaddexp(0.0, s_neg).sum()
    g_pos = _sigmoid(s_pos) - 1.0
    g_neg = _sigmoid(s_neg)
    grad_u = g_pos * v_pos + g_neg @ v_negs
    return float(loss), grad_u, g_pos * u, g_neg[:, None] * u[None, :]


@numba.njit(cache=True)
def _sgd_epoch(U, R, issue_rows, res_rows, order, negs, lr):
    d = U.shape[1]
    k = negs.shape[1]
    grad_u = np.empty(d)
    g_neg = np.empty(k)
    for t in range(order.shape[0]):
        p = order[t]
        i = issue_rows[p]
        r = res_rows[p]
        s = 0.0
        for c in range(d):
            s += U[i, c] * R[r, c]
        g_pos = 1.0 / (1.0 + np.exp(-s)) - 1.0
        for j in range(k):
            s = 0.0
            for c in range(d):
                s += U[i, c] * R[negs[t, j], c]
            g_neg[j] = 1.0 / (1.0 + np.exp(-s))
        for c in range(d):
            acc = g_pos * R[r, c]
            for j in range(k):
                acc += g_neg[j] * R[negs[t, j], c]
            grad_u[c] = acc
        # resolution rows updated from the pre-step issue vector
        for c in range(d):
            R[r, c] -= lr * g_pos * U[i, c]
        for j in range(k):
            for c in range(d):
                R[negs[t, j], c] -= lr * g_neg[j] * U[i, c]
        for c in range(d):
            U[i, c] -= lr * grad_u[c]


@dataclass
class IndexEmbedModel:
    issue_embeddings: np.ndarray
    resolution_embeddings: np.ndarray
    issue_ids: tuple[str, ...]
    resolution_ids: tuple[str, ...]
    issue_index: Mapping[str, int] = field(init=False, repr=False)
    resolution_index: Mapping[str, int] = field(init=False, repr=False)

    def __post_init__(self):
        self.issue_index = {s: i for i, s in enumerate(self.issue_ids)}
        self.resolution_index = {s: i for i, s in enumerate(self.resolution_ids)}

    @property
    def d(self) -> int:
        return self.issue_embeddings.shape[1]

    def scores_for_row(self, row: int) -> np.ndarray:
        return _sigmoid(self.resolution_embeddings @ self.issue_embeddings[row])


def indexembed_train(
    pairs: Sequence[tuple[str, str]],
    neg_k: int = 5,
    d: int = 64,
    lr: float = 0.01,
    epochs: int = 100,
    seed: int = 0,
) -> IndexEmbedModel:
    """Per-pair SGD; negatives drawn uniformly from the other resolutions."""
    if not pairs:
        raise InfeasibleError("no issue/resolution pairs to train on")
    if neg_k < 1:
        raise ValueError("neg_k must be >= 1")
    issue_ids = tuple(sorted({i for i, _ in pairs}))
    res_ids = tuple(sorted({r for _, r in pairs}))
    if len(res_ids) < 2:
        raise InfeasibleError("negative sampling needs at least two distinct resolutions")
    i_idx = {s: i for i, s in enumerate(issue_ids)}
    r_idx = {s: i for i, s in enumerate(res_ids)}
    issue_rows = np.array([i_idx[i] for i, _ in pairs], dtype=np.int64)
    res_rows = np.array([r_idx[r] for _, r in pairs], dtype=np.int64)
    rng = np.random.default_rng(seed)
    bound = 0.5 / d
    U = rng.uniform(-bound, bound, size=(len(issue_ids), d))
    R = rng.uniform(-bound, bound, size=(len(res_ids), d))
    n = len(pairs)
    for _ in range(epochs):
        order = rng.permutation(n)
        negs = rng.integers(0, len(res_ids) - 1, size=(n, neg_k))
        negs += negs >= res_rows[order][:, None]
        _sgd_epoch(U, R, issue_rows, res_rows, order, negs, lr)
    return IndexEmbedModel(U, R, issue_ids, res_ids)


def _unit_rows(M: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(M, axis=1, keepdims=True)
    return np.where(norms > 0, M / np.where(norms > 0, norms, 1.0), 0.0)


def nearest_row(query: np.ndarray, unit_matrix: np.ndarray) -> int:
    """Index of the max-cosine row; the lowest index wins ties."""
    qn = np.linalg.norm(query)
    if qn == 0 or unit_matrix.shape[0] == 0:
        return 0
    sims = unit_matrix @ (query / qn)
    return int(np.flatnonzero(sims == sims.max())[0])


def indexembed_predict(
    model: IndexEmbedModel,
    incident_id: str | None,
    text_vector: np.ndarray,
    train_ids: Sequence[str],
    train_unit_vectors: np.ndarray,
    k: int | None = None,
) -> list[tuple[str, float]]:
    """Normalized sigmoid scores over resolutions, ranked.

    A known ``incident_id`` uses its own issue row. Otherwise (cold start) the
    training issue whose text embedding is closest by cosine stands in;
    ``train_ids`` must be sorted so that index order equals id order.
    """
    if len(train_ids) == 0:
        raise InfeasibleError("cold start needs a non-empty training corpus")
    P = indexembed_proba(model, incident_id, text_vector, train_ids, train_unit_vectors)
    ranked = sorted(zip(model.resolution_ids, P.tolist()), key=lambda kv: (-kv[1], kv[0]))
    return ranked if k is None else ranked[:k]


def indexembed_proba(model, incident_id, text_vector, train_ids, train_unit_vectors) -> np.ndarray:
    row = model.issue_index.get(incident_id) if incident_id is not None else None
    if row is None:
        row = model.issue_index[train_ids[nearest_row(text_vector, train_unit_vectors)]]
    s = model.scores_for_row(row)
    return s / s.sum()


class IndexEmbedding(BaseEstimator):
    """Estimator wrapper: ``fit(issue_ids, resolution_ids, text_vectors)``."""

    def __init__(self, d=64, neg_k=5, lr=0.01, epochs=100, seed=0):
        self.d = d
        self.neg_k = neg_k
        self.lr = lr
        self.epochs = epochs
        self.seed = seed

    def fit(self, issue_ids, y, text_vectors):
        self.model_ = indexembed_train(list(zip(issue_ids, y)), self.neg_k, self.d, self.lr, self.epochs, self.seed)
        order = np.argsort(np.asarray(issue_ids, dtype=object).astype(str), kind="stable")
        self.train_ids_ = [issue_ids[i] for i in order]
        self.train_unit_ = _unit_rows(np.asarray(text_vectors, dtype=np.float64)[order])
        self.classes_ = np.array(self.model_.resolution_ids)
        return self

    def predict_proba(self, text_vectors, issue_ids=None):
        check_is_fitted(self, "model_")
        issue_ids = issue_ids if issue_ids is not None else [None] * len(text_vectors)
        return np.array([
            indexembed_proba(self.model_, iid, v, self.train_ids_, self.train_unit_)
            for iid, v in zip(issue_ids, text_vectors)
        ])

    def predict(self, text_vectors, issue_ids=None):
        return self.classes_[np.argmax(self.predict_proba(text_vectors, issue_ids), axis=1)]
