"""Dashboard data feed and the JSON schemas published with the package."""
from __future__ import annotations

import json
import os
from datetime import datetime, timezone
from functools import lru_cache
from importlib import resources
from typing import Iterable, Mapping

from .engine import DriftReport, MetricsReport, ModelBundle

FEED_SCHEMA_VERSION = "1.0"


@lru_cache(maxsize=None)
def load_schema(name: str) -> dict:
    """A packaged schema by stem, e.g. ``load_schema("dashboard_feed")``."""
    text = resources.files("resolvrec.schemas").joinpath(f"{name}.schema.json").read_text(encoding="utf-8")
    return json.loads(text)


def schema_names() -> list[str]:
    return sorted(
        p.name[: -len(".schema.json")]
        for p in resources.files("resolvrec.schemas").iterdir()
        if p.name.endswith(".schema.json")
    )


def _shares(counts: Mapping[str, int]) -> list[dict]:
    total = sum(counts.values())
    return [{"label": l, "count": int(c), "share": c / total if total else 0.0} for l, c in sorted(counts.items())]


def build_feed(bundle: ModelBundle, report: MetricsReport | Mapping, generated_at: str | None = None,
               drift_trace: Iterable[DriftReport | Mapping] = ()) -> dict:
    """Assemble the feed; ``report`` is a :class:`MetricsReport` or its ``to_dict()``."""
    r = report.to_dict() if isinstance(report, MetricsReport) else dict(report)
    if generated_at is None:
        generated_at = datetime.now(timezone.utc).isoformat(timespec="seconds")
    per_label = [
        {
            "label": s["label"],
            "accuracy": s["recall"],
            "precision": s["precision"],
            "f1": s["f1"],
            "support": s["support"],
        }
        for s in r["per_label"]
    ]
    sparsity = [{"label": c["label"], "size": c["size"], "share": c["share"]} for c in r["cluster_sparsity"]]
    return {
        "schema_version": FEED_SCHEMA_VERSION,
        "generated_at": generated_at,
        "bundle_version": bundle.bundle_version,
        "overall": {
            "accuracy": r["accuracy"],
            "macro_precision": r["macro_precision"],
            "macro_recall": r["macro_recall"],
            "macro_f1": r["macro_f1"],
            "n_evaluated": r["n_evaluated"],
            "base_accuracy": dict(r["base_accuracy"]),
        },
        "cluster_sparsity": sparsity,
        "per_label_accuracy": per_label,
        "confidence_histogram": {"edges": list(r["histogram_edges"]), "counts": list(r["histogram_counts"])},
        "time_to_resolution": dict(r["time_to_resolution"]),
        "ticket_volumes": _shares(r["volumes"]),
        "drift_trace": [d.to_dict() if isinstance(d, DriftReport) else dict(d) for d in drift_trace],
        "common_tokens_experimental": {
            "scope": "low-confidence tickets",
            "tokens": [{"token": t, "count": int(c)} for t, c in r["low_confidence_tokens"]],
        },
    }


def feed_bytes(feed: Mapping) -> bytes:
    return (json.dumps(feed, sort_keys=True, indent=2, ensure_ascii=False) + "\n").encode("utf-8")


def export_metrics(bundle: ModelBundle, report, path: str | os.PathLike, generated_at: str | None = None,
                   drift_trace=()) -> dict:
    """Write the feed to ``path`` and return it. Fixing ``generated_at`` makes the file reproducible."""
    feed = build_feed(bundle, report, generated_at, drift_trace)
    with open(path, "wb") as fh:
        fh.write(feed_bytes(feed))
    return feed
