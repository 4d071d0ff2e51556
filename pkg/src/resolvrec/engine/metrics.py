"""Hold-out evaluation: per-label and macro scores, confusion, confidence and volume tables."""
from __future__ import annotations

from collections import Counter
from dataclasses import asdict, dataclass, field

import numpy as np

from ..corpus import Corpus
from ..ensemble import BASE_MODELS
from ..errors import EmptyInputError
from .bundle import ModelBundle
from .inference import predict_many

N_BINS = 10
TOP_TOKENS = 20


@dataclass(frozen=True)
class LabelScore:
    label: str
    precision: float
    recall: float
    f1: float
    support: int
    predicted: int


@dataclass(frozen=True)
class MetricsReport:
    labels: tuple[str, ...]
    per_label: tuple[LabelScore, ...]
    accuracy: float
    macro_precision: float
    macro_recall: float
    macro_f1: float
    confusion: np.ndarray  # rows: truth, columns: prediction, both over ``labels``
    histogram_edges: tuple[float, ...]
    histogram_counts: tuple[int, ...]
    cluster_sparsity: tuple[dict, ...]
    time_to_resolution: dict
    volumes: dict
    base_accuracy: dict
    n_evaluated: int
    n_unlabeled: int = 0
    low_confidence_count: int = 0
    low_confidence_tokens: tuple[tuple[str, int], ...] = field(default=())

    def headline(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "macro_precision": self.macro_precision,
            "macro_recall": self.macro_recall,
            "macro_f1": self.macro_f1,
            "base_accuracy": dict(self.base_accuracy),
            "n_evaluated": self.n_evaluated,
        }

    def to_dict(self) -> dict:
        d = asdict(self)
        d["confusion"] = self.confusion.tolist()
        d["per_label"] = [asdict(s) for s in self.per_label]
        d["low_confidence_tokens"] = [list(t) for t in self.low_confidence_tokens]
        return d


def _prf(tp: np.ndarray, pred: np.ndarray, support: np.ndarray):
    precision = np.divide(tp, pred, out=np.zeros_like(tp, dtype=np.float64), where=pred > 0)
    recall = np.divide(tp, support, out=np.zeros_like(tp, dtype=np.float64), where=support > 0)
    denom = precision + recall
    f1 = np.divide(2 * precision * recall, denom, out=np.zeros_like(denom), where=denom > 0)
    return precision, recall, f1


def classification_scores(truth: list[str], pred: list[str], labels: list[str]):
    """Confusion matrix plus per-label and macro P/R/F1.

    Macro averages run over labels occurring in ``truth`` or ``pred``;
    undefined ratios count as 0.
    """
    idx = {l: i for i, l in enumerate(labels)}
    L = len(labels)
    cm = np.zeros((L, L), dtype=np.int64)
    np.add.at(cm, ([idx[t] for t in truth], [idx[p] for p in pred]), 1)
    tp = np.diag(cm).astype(np.float64)
    support = cm.sum(axis=1).astype(np.float64)
    predicted = cm.sum(axis=0).astype(np.float64)
    precision, recall, f1 = _prf(tp, predicted, support)
    present = (support > 0) | (predicted > 0)
    macro = tuple(float(v[present].mean()) if present.any() else 0.0 for v in (precision, recall, f1))
    return cm, precision, recall, f1, support.astype(int), predicted.astype(int), macro


def confidence_histogram(conf: np.ndarray, bins: int = N_BINS):
    """Equal-width bins over [0, 1]; the last bin is closed so 1.0 is counted."""
    counts, edges = np.histogram(np.clip(conf, 0.0, 1.0), bins=bins, range=(0.0, 1.0))
    return tuple(float(e) for e in edges), tuple(int(c) for c in counts)


def _time_to_resolution(records) -> dict:
    hours = [
        (r.resolved_date - r.submit_date).total_seconds() / 3600.0
        for r in records
        if r.submit_date is not None and r.resolved_date is not None
    ]
    if not hours:
        return {"count": 0, "mean_hours": None, "median_hours": None}
    return {"count": len(hours), "mean_hours": float(np.mean(hours)), "median_hours": float(np.median(hours))}


def cluster_sparsity(bundle: ModelBundle) -> tuple[dict, ...]:
    counts = bundle.summary.get("train_label_counts") or {}
    total = sum(counts.values())
    return tuple({"label": l, "size": int(c), "share": c / total} for l, c in sorted(counts.items()) if total)


def _truth(bundle: ModelBundle, record) -> str | None:
    if record.resolution_id is not None:
        return record.resolution_id
    if bundle.labeling is not None:
        return bundle.labeling.assignment.get(record.incident_id)
    return None


def evaluate(bundle: ModelBundle, test: Corpus) -> MetricsReport:
    """Predict every labelled ticket in ``test`` (no fallback) and tabulate."""
    if len(test) == 0:
        raise EmptyInputError("evaluation corpus is empty")
    labelled = [(r, _truth(bundle, r)) for r in test if r.description and r.description.strip()]
    usable = [(r, t) for r, t in labelled if t is not None]
    n_unlabeled = len(test) - len(usable)
    if not usable:
        raise EmptyInputError("no evaluation ticket carries a resolution id")
    records = [r for r, _ in usable]
    truth = [t for _, t in usable]
    results = predict_many(bundle, records, with_fallback=False)
    pred = [res.top.resolution_id for res in results]
    labels = sorted(set(bundle.label_space) | set(truth))
    cm, p, r, f1, support, predicted, macro = classification_scores(truth, pred, labels)
    per_label = tuple(
        LabelScore(l, float(p[i]), float(r[i]), float(f1[i]), int(support[i]), int(predicted[i]))
        for i, l in enumerate(labels)
    )
    conf = np.array([res.confidence for res in results])
    edges, counts = confidence_histogram(conf)
    base_acc = {}
    for m in BASE_MODELS:
        if m in bundle.disabled:
            continue
        base_acc[m] = float(np.mean([res.diagnostics[m][0] == t for res, t in zip(results, truth)]))
    low = [rec for rec, res in zip(records, results) if res.low_confidence]
    tok = Counter(t for rec in low for t in bundle.tokens(rec.description))
    top_tokens = tuple(sorted(tok.items(), key=lambda kv: (-kv[1], kv[0]))[:TOP_TOKENS])
    return MetricsReport(
        labels=tuple(labels),
        per_label=per_label,
        accuracy=float(np.trace(cm) / cm.sum()),
        macro_precision=macro[0],
        macro_recall=macro[1],
        macro_f1=macro[2],
        confusion=cm,
        histogram_edges=edges,
        histogram_counts=counts,
        cluster_sparsity=cluster_sparsity(bundle),
        time_to_resolution=_time_to_resolution(records),
        volumes=dict(sorted(Counter(truth).items())),
        base_accuracy=base_acc,
        n_evaluated=len(records),
        n_unlabeled=n_unlabeled,
        low_confidence_count=len(low),
        low_confidence_tokens=top_tokens,
    )
