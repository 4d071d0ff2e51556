"""Confidence-gated prediction and cosine fallback retrieval over a bundle."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from ..corpus import TicketRecord
from ..encoders import siamese_features
from ..ensemble import BASE_MODELS, ensemble_predict, meta_feature_matrix
from ..errors import InvalidTicketError
from ..textprep import embed_text
from .bundle import ModelBundle
from .pipeline import _BaseModels, _blocks_or_uniform, _Docs, base_probabilities


@dataclass(frozen=True)
class Neighbor:
    incident_id: str
    similarity: float
    resolution_text: str


@dataclass(frozen=True)
class RankedResolution:
    resolution_id: str
    resolution_text: str
    probability: float


@dataclass(frozen=True)
class PredictionResult:
    incident_id: str | None
    ranked: tuple[RankedResolution, ...]
    confidence: float
    low_confidence: bool
    fallback: tuple[Neighbor, ...] = ()
    diagnostics: dict = field(default_factory=dict)  # base model -> (top-1 id, probability)
    bundle_version: str = ""

    @property
    def top(self) -> RankedResolution:
        return self.ranked[0]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["ranked"] = [asdict(r) for r in self.ranked]
        d["fallback"] = [asdict(n) for n in self.fallback]
        d["diagnostics"] = {k: {"resolution_id": v[0], "probability": v[1]} for k, v in self.diagnostics.items()}
        return d


def _as_ticket(ticket) -> TicketRecord:
    if isinstance(ticket, TicketRecord):
        return ticket
    if isinstance(ticket, str):
        return TicketRecord("<query>", ticket)
    raise TypeError(f"expected TicketRecord or str, got {type(ticket).__name__}")


def _base_view(bundle: ModelBundle) -> _BaseModels:
    return _BaseModels(
        bundle.lda,
        bundle.topic_table,
        None if "siamese" in bundle.disabled else bundle.siamese,
        None if "indexembed" in bundle.disabled else bundle.indexembed,
        list(bundle.train_ids),
        bundle.knn_matrix,
    )


def _docs(bundle: ModelBundle, tickets: Sequence[TicketRecord]) -> _Docs:
    tokens = [bundle.tokens(t.description) for t in tickets]
    embeds = np.array([embed_text(t, bundle.wordvec) for t in tokens]).reshape(len(tokens), bundle.wordvec.dim)
    return _Docs([t.incident_id for t in tickets], tokens, [bundle.vocab.ids(t) for t in tokens], embeds,
                 bundle.vocab, bundle.wordvec)


def score_batch(bundle: ModelBundle, tickets: Sequence[TicketRecord]):
    """Ensemble probabilities (n, C), per-base blocks and preprocessed docs."""
    docs = _docs(bundle, tickets)
    rows = np.arange(len(tickets))
    blocks, _ = base_probabilities(_base_view(bundle), docs, rows, bundle.label_space, bundle.config, bundle.disabled)
    full = _blocks_or_uniform(blocks, len(tickets), bundle.C)
    P = ensemble_predict(bundle.logreg, meta_feature_matrix(*full))
    return P, blocks, docs


def _ranked(bundle: ModelBundle, p: np.ndarray) -> tuple[RankedResolution, ...]:
    # label_space is sorted, so a stable sort on -p breaks ties by ascending id
    order = np.argsort(-p, kind="stable")
    return tuple(
        RankedResolution(bundle.label_space[j], bundle.label_texts.get(bundle.label_space[j], ""), float(p[j]))
        for j in order
    )


def _top1(bundle: ModelBundle, p: np.ndarray) -> tuple[str, float]:
    j = int(np.argmax(p))
    return bundle.label_space[j], float(p[j])


def confidence_of(probs: Sequence[float], top_n: int) -> float:
    s = float(np.sum(np.sort(np.asarray(probs, dtype=np.float64))[::-1][:top_n]))
    return min(max(s, 0.0), 1.0)


def predict_many(bundle: ModelBundle, tickets, threshold: float | None = None, top_n: int | None = None,
                 fallback_k: int | None = None, with_fallback: bool = True) -> list[PredictionResult]:
    inf = bundle.config.inference
    threshold = inf.threshold if threshold is None else threshold
    top_n = inf.top_n if top_n is None else top_n
    fallback_k = inf.fallback_k if fallback_k is None else fallback_k
    tickets = [_as_ticket(t) for t in tickets]
    for t in tickets:
        if not t.description or not t.description.strip():
            raise InvalidTicketError(f"ticket {t.incident_id!r} has an empty description")
    if not tickets:
        return []
    P, blocks, docs = score_batch(bundle, tickets)
    results = []
    for i, t in enumerate(tickets):
        conf = confidence_of(P[i], top_n)
        low = conf < threshold
        fallback = ()
        if low and with_fallback:
            fallback = tuple(_knn(bundle, docs, i, fallback_k))
        diag = {m: _top1(bundle, blocks[m][i]) for m in BASE_MODELS if blocks[m] is not None}
        results.append(
            PredictionResult(t.incident_id, _ranked(bundle, P[i]), conf, low, fallback, diag, bundle.bundle_version)
        )
    return results


def predict(bundle: ModelBundle, ticket, threshold: float | None = None, top_n: int | None = None,
            fallback_k: int | None = None, with_fallback: bool = True) -> PredictionResult:
    """Recommend resolutions for one ticket (a :class:`TicketRecord` or description text).

    ``confidence`` is the sum of the ``top_n`` largest probabilities; below
    ``threshold`` the result is flagged and carries the ``fallback_k`` most
    similar training tickets. Unset arguments come from the bundle's config.
    """
    return predict_many(bundle, [ticket], threshold, top_n, fallback_k, with_fallback)[0]


def _knn(bundle: ModelBundle, docs: _Docs, i: int, k: int) -> list[Neighbor]:
    if bundle.config.inference.fallback_space == "siamese" and bundle.knn_siamese.shape[1]:
        theta_feats = siamese_features(docs.token_ids[i], docs.tokens[i], bundle.lda, bundle.wordvec,
                                       bundle.config.lda.infer_sweeps, bundle.config.seed("infer"))
        query = bundle.siamese.encode(theta_feats)[0]
        return nearest(bundle, bundle.knn_siamese, query, k)
    return nearest(bundle, bundle.knn_matrix, docs.embeds[i], k)


def nearest(bundle: ModelBundle, matrix: np.ndarray, query: np.ndarray, k: int) -> list[Neighbor]:
    """Exact cosine scan; rows follow ``bundle.train_ids`` (sorted), so a stable sort breaks ties by id."""
    n = matrix.shape[0]
    if n == 0 or k <= 0:
        return []
    qn = float(np.linalg.norm(query))
    sims = matrix @ (query / qn) if qn > 0 else np.zeros(n)
    order = np.argsort(-sims, kind="stable")[: min(k, n)]
    return [Neighbor(bundle.train_ids[j], float(sims[j]), bundle.train_resolutions[j]) for j in order]


def knn_similar(bundle: ModelBundle, ticket, k: int | None = None) -> list[Neighbor]:
    """The ``k`` training tickets most cosine-similar to ``ticket`` in word-vector space."""
    k = bundle.config.inference.fallback_k if k is None else k
    t = _as_ticket(ticket)
    tokens = bundle.tokens(t.description)
    return nearest(bundle, bundle.knn_matrix, embed_text(tokens, bundle.wordvec), k)
