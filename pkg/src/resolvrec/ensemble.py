"""Stacking meta-learner over base-model probability vectors."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import logsumexp, softmax
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .errors import AlignmentError, InfeasibleError, ShapeError

BASE_MODELS = ("lda", "siamese", "indexembed")


def _block(value, label_space: Sequence[str] | None, C: int, name: str) -> tuple[np.ndarray, bool]:
    if value is None:
        return np.full(C, 1.0 / C), True
    if isinstance(value, tuple) and len(value) == 2 and not np.isscalar(value[0]):
        labels, probs = value
        if label_space is not None and list(labels) != list(label_space):
            raise AlignmentError(f"{name} block is over labels {list(labels)}, expected {list(label_space)}")
        value = probs
    v = np.asarray(value, dtype=np.float64)
    if v.shape != (C,):
        raise AlignmentError(f"{name} block has {v.size} entries, expected {C}")
    return v, False


def build_meta_features(lda, siamese, indexembed, label_space: Sequence[str] | None = None):
    """[lda || siamese || indexembed || three top-1 confidences].

    Each block is a probability vector, a ``(labels, probs)`` pair checked
    against ``label_space``, or ``None`` for a disabled model (uniform block).
    Returns ``(row, disabled)`` where ``disabled`` names the uniform blocks.
    """
    if label_space is not None:
        C = len(label_space)
    else:
        ref = next(v for v in (lda, siamese, indexembed) if v is not None)
        C = len(ref[1] if isinstance(ref, tuple) else ref)
    blocks, disabled = [], []
    for name, value in zip(BASE_MODELS, (lda, siamese, indexembed)):
        v, off = _block(value, label_space, C, name)
        blocks.append(v)
        if off:
            disabled.append(name)
    row = np.concatenate(blocks + [np.array([b.max() for b in blocks])])
    return row, tuple(disabled)


def meta_feature_matrix(lda: np.ndarray, siamese: np.ndarray, indexembed: np.ndarray) -> np.ndarray:
    """Row-wise :func:`build_meta_features` for aligned (n, C) blocks."""
    blocks = [np.asarray(b, dtype=np.float64) for b in (lda, siamese, indexembed)]
    if len({b.shape for b in blocks}) != 1:
        raise AlignmentError(f"block shapes differ: {[b.shape for b in blocks]}")
    return np.hstack(blocks + [np.column_stack([b.max(axis=1) for b in blocks])])


def softmax_regression_loss(W, b, X, y, l2: float):
    """Mean cross-entropy + (l2/2)|W|^2 and gradients (bias unregularized)."""
    logits = X @ W.T + b
    log_p = logits - logsumexp(logits, axis=1, keepdims=True)
    n = X.shape[0]
    loss = -log_p[np.arange(n), y].mean() + 0.5 * l2 * np.sum(W * W)
    G = np.exp(log_p)
    G[np.arange(n), y] -= 1.0
    G /= n
    return float(loss), G.T @ X + l2 * W, G.sum(axis=0)


@dataclass
class LogRegModel:
    weights: np.ndarray  # (C, F)
    bias: np.ndarray  # (C,)
    l2: float = 1e-3
    lr: float = 0.1
    epochs: int = 0
    seed: int = 0
    loss_trace: list[float] = field(default_factory=list)

    @property
    def final_loss(self) -> float:
        return self.loss_trace[-1] if self.loss_trace else float("nan")


def logreg_fit(X, y, n_classes: int | None = None, l2: float = 1e-3, lr: float = 0.1,
               epochs: int = 300, seed: int = 0, batch_size: int = 32) -> LogRegModel:
    """Seeded mini-batch gradient descent from zero weights; ``y`` holds class indices."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if X.shape[0] != y.shape[0]:
        raise ShapeError(f"{X.shape[0]} rows but {y.shape[0]} labels")
    if len(np.unique(y)) < 2:
        raise InfeasibleError("logistic regression needs at least two classes")
    C = int(n_classes if n_classes is not None else y.max() + 1)
    W = np.zeros((C, X.shape[1]))
    b = np.zeros(C)
    rng = np.random.default_rng(seed)
    trace = []
    n = X.shape[0]
    for _ in range(epochs):
        order = rng.permutation(n)
        for start in range(0, n, batch_size):
            idx = order[start : start + batch_size]
            _, dW, db = softmax_regression_loss(W, b, X[idx], y[idx], l2)
            W -= lr * dW
            b -= lr * db
        trace.append(softmax_regression_loss(W, b, X, y, l2)[0])
    return LogRegModel(W, b, l2, lr, epochs, seed, trace)


def ensemble_predict(model: LogRegModel, meta) -> np.ndarray:
    meta = np.asarray(meta, dtype=np.float64)
    if meta.shape[-1] != model.weights.shape[1]:
        raise ShapeError(f"meta-feature width {meta.shape[-1]} != model width {model.weights.shape[1]}")
    return softmax(meta @ model.weights.T + model.bias, axis=-1)


class SoftmaxRegression(ClassifierMixin, BaseEstimator):
    """Multinomial logistic regression; pass ``classes`` to fix the output label order."""

    def __init__(self, l2=1e-3, lr=0.1, epochs=300, batch_size=32, seed=0, classes=None):
        self.l2 = l2
        self.lr = lr
        self.epochs = epochs
        self.batch_size = batch_size
        self.seed = seed
        self.classes = classes

    def fit(self, X, y):
        X = check_array(X)
        y = np.asarray(y)
        self.classes_ = np.asarray(sorted(set(y.tolist())) if self.classes is None else list(self.classes))
        idx = {c: i for i, c in enumerate(self.classes_.tolist())}
        try:
            y_idx = np.array([idx[v] for v in y.tolist()])
        except KeyError as exc:
            raise AlignmentError(f"label {exc} not in classes") from None
        self.model_ = logreg_fit(X, y_idx, len(self.classes_), self.l2, self.lr, self.epochs, self.seed, self.batch_size)
        return self

    def predict_proba(self, X):
        check_is_fitted(self, "model_")
        return ensemble_predict(self.model_, check_array(X))

    def predict(self, X):
        return self.classes_[np.argmax(self.predict_proba(X), axis=1)]
