"""Ticket records, CSV ingestion, cleaning and train/test splitting."""
from __future__ import annotations

import csv
import io
import math
import os
from dataclasses import dataclass, field, replace
from datetime import datetime
from typing import Iterable, Iterator, Mapping, Sequence

import numpy as np

from .errors import (
    DuplicateKeyError,
    EmptyAfterCleanError,
    EmptyInputError,
    SchemaError,
    TooSmallError,
)

DEFAULT_DATE_FORMAT = "%d-%m-%Y %I:%M %p"

FIELDS = (
    "incident_id",
    "description",
    "submit_date",
    "resolved_date",
    "resolution_text",
    "resolution_id",
)
MANDATORY = ("incident_id", "description")

DEFAULT_COLUMNS = {
    "incident_id": "Incident Number",
    "description": "Description",
    "submit_date": "Submit Date",
    "resolved_date": "Resolved Date",
    "resolution_text": "Resolution",
    "resolution_id": "Resolution ID",
}


@dataclass(frozen=True)
class TicketRecord:
    incident_id: str
    description: str
    submit_date: datetime | None = None
    resolved_date: datetime | None = None
    resolution_text: str | None = None
    resolution_id: str | None = None

    def __post_init__(self):
        if not self.incident_id:
            raise ValueError("incident_id must be non-empty")
        if (
            self.submit_date is not None
            and self.resolved_date is not None
            and self.resolved_date < self.submit_date
        ):
            raise ValueError(f"{self.incident_id}: resolved_date precedes submit_date")


@dataclass(frozen=True)
class Corpus(Sequence):
    records: tuple[TicketRecord, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "records", tuple(self.records))
        seen = set()
        for rec in self.records:
            if rec.incident_id in seen:
                raise DuplicateKeyError(f"duplicate incident_id {rec.incident_id!r}")
            seen.add(rec.incident_id)

    def __len__(self):
        return len(self.records)

    def __getitem__(self, i):
        return self.records[i]

    def __iter__(self) -> Iterator[TicketRecord]:
        return iter(self.records)

    @property
    def label_space(self) -> tuple[str, ...] | None:
        labels = sorted({r.resolution_id for r in self.records if r.resolution_id is not None})
        return tuple(labels) if labels else None

    @property
    def ids(self) -> list[str]:
        return [r.incident_id for r in self.records]

    def subset(self, indices: Iterable[int]) -> "Corpus":
        return Corpus(tuple(self.records[i] for i in indices))

    def with_labels(self, assignment: Mapping[str, str]) -> "Corpus":
        """Copy with ``resolution_id`` filled from ``assignment`` where known."""
        return Corpus(
            tuple(
                replace(r, resolution_id=assignment[r.incident_id])
                if r.incident_id in assignment
                else r
                for r in self.records
            )
        )


@dataclass(frozen=True)
class CsvFormatConfig:
    columns: Mapping[str, str] = field(default_factory=lambda: dict(DEFAULT_COLUMNS))
    date_format: str = DEFAULT_DATE_FORMAT

    def column(self, name: str) -> str:
        return self.columns.get(name, DEFAULT_COLUMNS[name])


@dataclass(frozen=True)
class CleanPolicy:
    require_resolution: bool = False


@dataclass(frozen=True)
class CleanReport:
    n_in: int
    n_out: int
    dropped: Mapping[str, int]


@dataclass(frozen=True)
class SplitResult:
    train: Corpus
    test: Corpus
    seed: int
    ratio: float
    stratified: bool
    mode: str = "stratified"


def parse_date(text: str | None, fmt: str = DEFAULT_DATE_FORMAT) -> datetime | None:
    if text is None:
        return None
    text = text.strip()
    if not text:
        return None
    try:
        return datetime.strptime(text, fmt)
    except ValueError:
        pass
    try:
        return datetime.fromisoformat(text)
    except ValueError:
        return None


def _read_text(source) -> str:
    if isinstance(source, (bytes, bytearray)):
        return bytes(source).decode("utf-8-sig")
    if isinstance(source, (str, os.PathLike)):
        with open(source, "rb") as fh:
            return fh.read().decode("utf-8-sig")
    data = source.read()
    if isinstance(data, bytes):
        return data.decode("utf-8-sig")
    return data


def _opt(value: str | None) -> str | None:
    if value is None:
        return None
    value = value.strip()
    return value or None


def load_csv(source, fmt: CsvFormatConfig | None = None) -> Corpus:
    """Read an RFC-4180 CSV file into a :class:`Corpus`.

    ``source`` may be a path, raw bytes, or a binary/text stream. Optional
    fields that fail to parse become ``None``.
    """
    fmt = fmt or CsvFormatConfig()
    reader = csv.reader(io.StringIO(_read_text(source), newline=""), skipinitialspace=True)
    try:
        header = [h.strip() for h in next(reader)]
    except StopIteration:
        raise EmptyInputError("CSV has no header row") from None

    index = {}
    for name in FIELDS:
        col = fmt.column(name)
        if col in header:
            index[name] = header.index(col)
        elif name in MANDATORY:
            raise SchemaError(f"missing mandatory column {col!r} (field {name})")

    def cell(row, name):
        i = index.get(name)
        if i is None or i >= len(row):
            return None
        return row[i]

    records = []
    first_row: dict[str, int] = {}
    for rowno, row in enumerate(reader, start=2):
        if not any(c.strip() for c in row):
            continue
        iid = (cell(row, "incident_id") or "").strip()
        if not iid:
            raise SchemaError(f"row {rowno}: empty incident id")
        if iid in first_row:
            raise DuplicateKeyError(
                f"duplicate incident_id {iid!r} at rows {first_row[iid]} and {rowno}"
            )
        first_row[iid] = rowno
        submit = parse_date(cell(row, "submit_date"), fmt.date_format)
        resolved = parse_date(cell(row, "resolved_date"), fmt.date_format)
        if submit is not None and resolved is not None and resolved < submit:
            resolved = None
        records.append(
            TicketRecord(
                incident_id=iid,
                description=(cell(row, "description") or "").strip(),
                submit_date=submit,
                resolved_date=resolved,
                resolution_text=_opt(cell(row, "resolution_text")),
                resolution_id=_opt(cell(row, "resolution_id")),
            )
        )
    if not records:
        raise EmptyInputError("CSV contains no data rows")
    return Corpus(tuple(records))


def write_csv(corpus: Corpus, sink, fmt: CsvFormatConfig | None = None) -> None:
    """Inverse of :func:`load_csv` for every retained field."""
    fmt = fmt or CsvFormatConfig()
    close = False
    if isinstance(sink, (str, os.PathLike)):
        sink = open(sink, "w", encoding="utf-8", newline="")
        close = True
    try:
        writer = csv.writer(sink, lineterminator="\r\n")
        writer.writerow([fmt.column(n) for n in FIELDS])
        for r in corpus:
            row = []
            for name in FIELDS:
                v = getattr(r, name)
                if isinstance(v, datetime):
                    v = v.strftime(fmt.date_format) if v.second == 0 and v.microsecond == 0 else v.isoformat()
                row.append("" if v is None else v)
            writer.writerow(row)
    finally:
        if close:
            sink.close()


def clean(corpus: Corpus, policy: CleanPolicy | None = None) -> tuple[Corpus, CleanReport]:
    policy = policy or CleanPolicy()
    kept = []
    dropped = {"empty_description": 0, "missing_resolution": 0}
    for r in corpus:
        if not r.description.strip():
            dropped["empty_description"] += 1
        elif policy.require_resolution and not (r.resolution_text or "").strip():
            dropped["missing_resolution"] += 1
        else:
            kept.append(r)
    if not kept:
        raise EmptyAfterCleanError(f"no records survive cleaning (dropped {dropped})")
    report = CleanReport(n_in=len(corpus), n_out=len(kept), dropped={k: v for k, v in dropped.items() if v})
    return Corpus(tuple(kept)), report


def _stratified_train_counts(sizes: np.ndarray, n_train: int, ratio: float) -> np.ndarray:
    ideal = ratio * sizes
    counts = np.floor(ideal).astype(int)
    lo = np.minimum(1, sizes - 1)
    hi = np.maximum(sizes - 1, lo)
    counts = np.clip(counts, lo, hi)
    remainder = ideal - counts
    for relax in (False, True):
        if relax:
            lo, hi = np.zeros_like(sizes), sizes
        # largest remainder first when adding, smallest first when removing
        while counts.sum() < n_train:
            room = np.where(counts < hi)[0]
            if room.size == 0:
                break
            j = room[np.argmax(remainder[room])]
            counts[j] += 1
            remainder[j] -= 1
        while counts.sum() > n_train:
            room = np.where(counts > lo)[0]
            if room.size == 0:
                break
            j = room[np.argmin(remainder[room])]
            counts[j] -= 1
            remainder[j] += 1
        if counts.sum() == n_train:
            break
    return counts


def split(corpus: Corpus, ratio: float = 0.8, seed: int = 0, mode: str = "stratified") -> SplitResult:
    """Seeded shuffle split with ``|train| = floor(ratio * N)``.

    ``mode`` is ``"stratified"`` (falls back to a plain shuffle unless every
    record is labelled and every label has at least two members),
    ``"shuffle"``, or ``"time"`` (oldest submissions train).
    """
    n = len(corpus)
    if n < 2:
        raise TooSmallError(f"need at least 2 records to split, got {n}")
    if not 0.0 < ratio < 1.0:
        raise ValueError(f"ratio must be in (0, 1), got {ratio}")
    if mode not in ("stratified", "shuffle", "time"):
        raise ValueError(f"unknown split mode {mode!r}")
    n_train = math.floor(ratio * n)
    rng = np.random.default_rng(seed)

    if mode == "time":
        order = sorted(range(n), key=lambda i: (corpus[i].submit_date or datetime.min, i))
        return SplitResult(
            corpus.subset(order[:n_train]), corpus.subset(order[n_train:]), seed, ratio, False, mode
        )

    perm = rng.permutation(n)
    labels = [r.resolution_id for r in corpus]
    stratify = False
    if mode == "stratified" and all(lbl is not None for lbl in labels):
        uniq, counts = np.unique(np.asarray(labels, dtype=object), return_counts=True)
        stratify = bool(np.all(counts >= 2))

    if not stratify:
        train_idx = perm[:n_train]
        test_idx = perm[n_train:]
    else:
        label_index = {lbl: j for j, lbl in enumerate(uniq)}
        train_counts = _stratified_train_counts(counts, n_train, ratio)
        taken = np.zeros(len(uniq), dtype=int)
        in_train = np.zeros(n, dtype=bool)
        for pos in perm:
            j = label_index[labels[pos]]
            if taken[j] < train_counts[j]:
                in_train[pos] = True
                taken[j] += 1
        train_idx = [p for p in perm if in_train[p]]
        test_idx = [p for p in perm if not in_train[p]]
    return SplitResult(
        corpus.subset(int(i) for i in train_idx),
        corpus.subset(int(i) for i in test_idx),
        seed,
        ratio,
        stratify,
        mode,
    )


def window(corpus: Corpus, days: float | None) -> Corpus:
    """Keep tickets submitted within ``days`` of the newest submission."""
    if days is None:
        return corpus
    dated = [r.submit_date for r in corpus if r.submit_date is not None]
    if not dated:
        return corpus
    newest = max(dated)
    kept = [
        r for r in corpus
        if r.submit_date is not None and (newest - r.submit_date).total_seconds() <= days * 86400
    ]
    if not kept:
        raise EmptyAfterCleanError(f"no tickets inside the {days}-day window")
    return Corpus(tuple(kept))
