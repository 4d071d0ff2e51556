"""Triplet-loss Siamese encoder with nearest-prototype scoring."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted

from ..errors import InfeasibleError
from ..textprep import WordVectorTable, embed_text
from ..topics import LdaModel, lda_infer
from .mlp import DEFAULT_WIDTHS, Mlp, init_mlp, mlp_backward, mlp_forward, sgd_step

N_FROZEN = 3


@dataclass(frozen=True)
class PrototypeSet:
    labels: tuple[str, ...]
    vectors: np.ndarray  # (C, out_dim), unit rows


@dataclass
class SiameseModel:
    mlp: Mlp
    feature_mean: np.ndarray
    feature_scale: np.ndarray
    prototypes: PrototypeSet
    loss_trace: list[float] = field(default_factory=list)

    def encode(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        return mlp_forward(self.mlp, (X - self.feature_mean) / self.feature_scale)


@dataclass(frozen=True)
class SiameseConfig:
    margin: float = 0.2
    lr: float = 0.01
    epochs: int = 100
    batch_size: int = 32
    seed: int = 0
    fine_tune: bool = False
    fine_tune_epochs: int = 20
    widths: tuple[int, ...] = DEFAULT_WIDTHS


@dataclass(frozen=True)
class AugmentPolicy:
    pool: tuple[str, ...]
    stopwords: frozenset[str] = frozenset()
    min_replace: int = 1
    max_replace: int = 3


def siamese_features(
    token_ids: Sequence[int],
    tokens: Sequence[str],
    lda_model: LdaModel,
    table: WordVectorTable,
    infer_sweeps: int = 50,
    seed: int = 0,
) -> np.ndarray:
    """[fold-in topic distribution || mean word vector]."""
    theta = lda_infer(lda_model, token_ids, infer_sweeps, seed)
    return np.concatenate([theta, embed_text(tokens, table)])


def triplet_loss(a, p, n, margin: float = 0.2):
    """max(0, |a-p|^2 - |a-n|^2 + margin) and its gradients w.r.t. a, p, n."""
    a, p, n = (np.asarray(v, dtype=np.float64) for v in (a, p, n))
    d_ap = a - p
    d_an = a - n
    value = float(d_ap @ d_ap - d_an @ d_an + margin)
    if value <= 0.0:
        zero = np.zeros_like(a)
        return 0.0, zero, zero.copy(), zero.copy()
    return value, 2.0 * (n - p), -2.0 * d_ap, 2.0 * d_an


def _batch_triplet(A, P, N, margin):
    d_ap = A - P
    d_an = A - N
    h = np.einsum("ij,ij->i", d_ap, d_ap) - np.einsum("ij,ij->i", d_an, d_an) + margin
    active = (h > 0)[:, None]
    scale = 1.0 / A.shape[0]
    gA = np.where(active, 2.0 * (N - P), 0.0) * scale
    gP = np.where(active, -2.0 * d_ap, 0.0) * scale
    gN = np.where(active, 2.0 * d_an, 0.0) * scale
    return float(np.maximum(h, 0.0).mean()), gA, gP, gN


def augment(tokens: Sequence[str], policy: AugmentPolicy, seed: int = 0) -> list[str]:
    """Swap 1-3 non-stopword tokens for words drawn from ``policy.pool``."""
    out = list(tokens)
    slots = [i for i, t in enumerate(out) if t not in policy.stopwords]
    if not slots or not policy.pool:
        return out
    rng = np.random.default_rng(seed)
    r = int(rng.integers(policy.min_replace, policy.max_replace + 1))
    r = min(r, len(slots))
    for i in sorted(rng.choice(slots, size=r, replace=False)):
        choices = [w for w in policy.pool if w != out[i]] or list(policy.pool)
        out[i] = choices[int(rng.integers(len(choices)))]
    return out


class _TripletSampler:
    """Anchor/positive share a label, negative is drawn from any other label."""

    def __init__(self, labels: np.ndarray):
        self.n = len(labels)
        order = np.argsort(labels, kind="stable")
        self.sorted_idx = order
        uniq, start, size = np.unique(labels[order], return_index=True, return_counts=True)
        lab_pos = np.searchsorted(uniq, labels)
        self.start = start[lab_pos]
        self.size = size[lab_pos]
        rank = np.empty(self.n, dtype=np.int64)
        rank[order] = np.arange(self.n)
        self.rank_in_label = rank - self.start

    def draw(self, anchors: np.ndarray, rng) -> tuple[np.ndarray, np.ndarray]:
        size = self.size[anchors]
        start = self.start[anchors]
        q = (rng.random(anchors.size) * np.maximum(size - 1, 1)).astype(np.int64)
        q = np.where(q >= self.rank_in_label[anchors], q + 1, q)
        q = np.where(size == 1, 0, q)
        pos = self.sorted_idx[start + q]
        r = (rng.random(anchors.size) * (self.n - size)).astype(np.int64)
        r = np.where(r >= start, r + size, r)
        neg = self.sorted_idx[r]
        return pos, neg


def _run_epochs(mlp, Xs, labels, cfg: SiameseConfig, epochs: int, rng, trace):
    sampler = _TripletSampler(labels)
    n = Xs.shape[0]
    for _ in range(epochs):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, cfg.batch_size):
            anchors = order[start : start + cfg.batch_size]
            pos, neg = sampler.draw(anchors, rng)
            batch = np.vstack([Xs[anchors], Xs[pos], Xs[neg]])
            Y, cache = mlp_forward(mlp, batch, return_cache=True)
            b = anchors.size
            loss, gA, gP, gN = _batch_triplet(Y[:b], Y[b : 2 * b], Y[2 * b :], cfg.margin)
            total += loss * b
            sgd_step(mlp, mlp_backward(mlp, cache, np.vstack([gA, gP, gN])), cfg.lr)
        trace.append(total / n)


def compute_prototypes(model_or_encode, X, labels) -> PrototypeSet:
    encode = model_or_encode.encode if hasattr(model_or_encode, "encode") else model_or_encode
    E = encode(X)
    labels = np.asarray(labels)
    uniq = sorted(set(labels.tolist()))
    vecs = []
    for lbl in uniq:
        m = E[labels == lbl].mean(axis=0)
        norm = np.linalg.norm(m)
        if norm == 0.0:
            m = np.zeros(E.shape[1])
            m[0] = 1.0
            norm = 1.0
        vecs.append(m / norm)
    return PrototypeSet(tuple(uniq), np.array(vecs))


def siamese_train(features, labels, config: SiameseConfig = SiameseConfig(), init: SiameseModel | None = None,
                  prototype_mask=None) -> SiameseModel:
    """SGD on batched triplet loss.

    Without ``init`` the encoder is freshly initialized and trained for
    ``config.epochs``; ``config.fine_tune`` then adds ``fine_tune_epochs`` with
    the lowest three weight layers frozen. With ``init`` only the frozen
    fine-tuning phase runs (when ``fine_tune``) on a copy of its encoder.
    ``prototype_mask`` selects the rows (e.g. non-augmented) used for prototypes.
    """
    X = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels, dtype=object).astype(str)
    if len(set(labels.tolist())) < 2:
        raise InfeasibleError("triplet training needs at least two labels")
    rng = np.random.default_rng(config.seed)
    trace: list[float] = []
    if init is None:
        mean = X.mean(axis=0)
        scale = X.std(axis=0)
        scale = np.where(scale > 1e-12, scale, 1.0)
        mlp = init_mlp(X.shape[1], config.widths, config.seed)
        _run_epochs(mlp, (X - mean) / scale, labels, config, config.epochs, rng, trace)
    else:
        mean, scale = init.feature_mean, init.feature_scale
        mlp = init.mlp.copy()
    if config.fine_tune:
        mlp.freeze_lowest(N_FROZEN)
        _run_epochs(mlp, (X - mean) / scale, labels, config, config.fine_tune_epochs, rng, trace)
    mask = slice(None) if prototype_mask is None else np.asarray(prototype_mask, dtype=bool)
    model = SiameseModel(mlp, mean, scale, PrototypeSet((), np.zeros((0, mlp.output_dim))), trace)
    model.prototypes = compute_prototypes(model, X[mask], labels[mask])
    return model


def siamese_predict(model: SiameseModel, features, prototypes: PrototypeSet | None = None) -> np.ndarray:
    """softmax(-|e - prototype|^2) over ``prototypes.labels``; rows for 2-D input."""
    protos = prototypes or model.prototypes
    E = model.encode(features)
    d2 = (
        np.einsum("ij,ij->i", E, E)[:, None]
        - 2.0 * E @ protos.vectors.T
        + np.einsum("ij,ij->i", protos.vectors, protos.vectors)[None, :]
    )
    logits = -np.maximum(d2, 0.0)
    logits -= logits.max(axis=1, keepdims=True)
    P = np.exp(logits)
    P /= P.sum(axis=1, keepdims=True)
    return P[0] if np.asarray(features).ndim == 1 else P


class SiameseEncoder(ClassifierMixin, BaseEstimator):
    def __init__(self, margin=0.2, lr=0.01, epochs=100, batch_size=32, seed=0,
                 fine_tune=False, fine_tune_epochs=20, widths=DEFAULT_WIDTHS):
        self.margin = margin
        self.lr = lr
        self.epochs = epochs
        self.batch_size = batch_size
        self.seed = seed
        self.fine_tune = fine_tune
        self.fine_tune_epochs = fine_tune_epochs
        self.widths = widths

    def fit(self, X, y):
        cfg = SiameseConfig(self.margin, self.lr, self.epochs, self.batch_size, self.seed,
                            self.fine_tune, self.fine_tune_epochs, tuple(self.widths))
        self.model_ = siamese_train(X, y, cfg)
        self.classes_ = np.array(self.model_.prototypes.labels)
        return self

    def transform(self, X):
        check_is_fitted(self, "model_")
        return self.model_.encode(X)

    def predict_proba(self, X):
        check_is_fitted(self, "model_")
        return np.atleast_2d(siamese_predict(self.model_, X))

    def predict(self, X):
        return self.classes_[np.argmax(self.predict_proba(X), axis=1)]
