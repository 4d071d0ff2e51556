"""sklearn-style front end over the full training pipeline."""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted

from .config import AppConfig
from .corpus import Corpus, TicketRecord
from .engine import ModelBundle, load_bundle, predict_many, save_bundle, train_pipeline


def _as_corpus(X, y=None) -> Corpus:
    if isinstance(X, Corpus):
        return X.with_labels(dict(zip(X.ids, y))) if y is not None else X
    texts = list(X)
    labels = list(y) if y is not None else [None] * len(texts)
    if len(labels) != len(texts):
        raise ValueError(f"{len(texts)} texts but {len(labels)} labels")
    width = len(str(max(len(texts) - 1, 0)))
    return Corpus(tuple(TicketRecord(f"T{i:0{width}d}", t, resolution_id=l) for i, (t, l) in enumerate(zip(texts, labels))))


class ResolutionRecommender(ClassifierMixin, BaseEstimator):
    """Fit on a :class:`Corpus` (or description texts plus resolution ids); predict resolution ids.

    ``config`` is an :class:`AppConfig`; ``seed`` overrides its master seed.
    """

    def __init__(self, config: AppConfig | None = None, seed: int | None = None):
        self.config = config
        self.seed = seed

    def fit(self, X, y=None):
        cfg = (self.config or AppConfig()).override("train", seed=self.seed)
        self.bundle_ = train_pipeline(_as_corpus(X, y), cfg)
        self.classes_ = np.array(self.bundle_.label_space)
        return self

    @classmethod
    def from_bundle(cls, bundle: ModelBundle | str) -> "ResolutionRecommender":
        b = load_bundle(bundle) if not isinstance(bundle, ModelBundle) else bundle
        est = cls(config=b.config)
        est.bundle_ = b
        est.classes_ = np.array(b.label_space)
        return est

    def recommend(self, X, with_fallback: bool = True):
        check_is_fitted(self, "bundle_")
        tickets = list(X) if isinstance(X, Corpus) else [t if isinstance(t, TicketRecord) else str(t) for t in X]
        return predict_many(self.bundle_, tickets, with_fallback=with_fallback)

    def predict_proba(self, X) -> np.ndarray:
        results = self.recommend(X, with_fallback=False)
        col = {l: j for j, l in enumerate(self.classes_.tolist())}
        P = np.zeros((len(results), len(col)))
        for i, r in enumerate(results):
            for item in r.ranked:
                P[i, col[item.resolution_id]] = item.probability
        return P

    def predict(self, X) -> np.ndarray:
        return np.array([r.top.resolution_id for r in self.recommend(X, with_fallback=False)])

    def save(self, path) -> str:
        check_is_fitted(self, "bundle_")
        return save_bundle(self.bundle_, path)
