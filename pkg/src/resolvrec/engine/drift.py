"""Topic-distribution drift between the training baseline and a recent window."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from ..corpus import Corpus, TicketRecord
from ..errors import ShapeError, TooFewRecentError
from ..topics import lda_infer
from .bundle import ModelBundle


@dataclass(frozen=True)
class DriftReport:
    js_divergence: float
    window_size: int
    baseline_size: int
    threshold: float
    retrain_recommended: bool

    def to_dict(self) -> dict:
        return asdict(self)


def _kl_terms(p: np.ndarray, m: np.ndarray) -> float:
    nz = p > 0
    return float(np.sum(p[nz] * np.log(p[nz] / m[nz])))


def js_divergence(p, q) -> float:
    """Jensen-Shannon divergence in nats; inputs are normalized first."""
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape != q.shape or p.ndim != 1:
        raise ShapeError(f"distributions must be 1-D and equal length, got {p.shape} and {q.shape}")
    if np.any(p < 0) or np.any(q < 0) or p.sum() <= 0 or q.sum() <= 0:
        raise ValueError("distributions must be non-negative with positive mass")
    p = p / p.sum()
    q = q / q.sum()
    if np.array_equal(p, q):
        return 0.0
    m = 0.5 * (p + q)
    js = 0.5 * _kl_terms(p, m) + 0.5 * _kl_terms(q, m)
    return float(min(max(js, 0.0), np.log(2.0)))


def recent_topic_mean(bundle: ModelBundle, recent) -> np.ndarray:
    cfg = bundle.config
    thetas = [
        lda_infer(bundle.lda, bundle.vocab.ids(bundle.tokens(r.description)), cfg.lda.infer_sweeps, cfg.seed("infer"))
        for r in recent
    ]
    return np.mean(thetas, axis=0)


def drift_score(bundle: ModelBundle, recent: Corpus | list[TicketRecord], threshold: float | None = None,
                min_recent: int | None = None) -> DriftReport:
    """JS divergence of the mean fold-in topic distribution of ``recent`` from the training mean."""
    threshold = bundle.config.drift.threshold if threshold is None else threshold
    min_recent = bundle.config.drift.window if min_recent is None else min_recent
    recent = [r for r in recent if r.description and r.description.strip()]
    if len(recent) < min_recent:
        raise TooFewRecentError(f"drift needs at least {min_recent} recent tickets, got {len(recent)}")
    js = js_divergence(bundle.drift_baseline, recent_topic_mean(bundle, recent))
    return DriftReport(js, len(recent), int(bundle.summary.get("n_train", len(bundle.train_ids))), threshold,
                       js > threshold)
