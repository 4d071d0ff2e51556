"""Append-only JSON Lines prediction log."""
from __future__ import annotations

import json
import os
import threading
import time
from dataclasses import asdict, dataclass
from typing import IO

LOG_FIELDS = ("ts", "incident_id", "resolution_id", "confidence", "low_confidence", "bundle_version", "latency_ms")


@dataclass(frozen=True)
class PredictionLogEntry:
    ts: float
    incident_id: str | None
    resolution_id: str
    confidence: float
    low_confidence: bool
    bundle_version: str
    latency_ms: float

    @classmethod
    def from_result(cls, result, latency_ms: float, ts: float | None = None) -> "PredictionLogEntry":
        return cls(time.time() if ts is None else ts, result.incident_id, result.top.resolution_id,
                   result.confidence, result.low_confidence, result.bundle_version, float(latency_ms))


def log_prediction(sink: IO[str], entry: PredictionLogEntry) -> None:
    """Write one JSON line and flush."""
    sink.write(json.dumps(asdict(entry), sort_keys=False) + "\n")
    sink.flush()


class PredictionLogger:
    """Single-writer log: appends are serialized and timestamps never go backwards."""

    def __init__(self, path: str | os.PathLike):
        self.path = os.fspath(path)
        self._lock = threading.Lock()
        self._last_ts = float("-inf")
        self._fh = open(self.path, "a", encoding="utf-8")

    def log(self, result, latency_ms: float) -> PredictionLogEntry:
        with self._lock:
            ts = max(time.time(), self._last_ts)
            self._last_ts = ts
            entry = PredictionLogEntry.from_result(result, latency_ms, ts)
            log_prediction(self._fh, entry)
        return entry

    def close(self) -> None:
        with self._lock:
            self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
