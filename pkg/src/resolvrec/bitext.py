"""Loader for the public Bitext customer-support CSV (intents as resolution ids)."""
from __future__ import annotations

import csv
import io
import os
import urllib.request
from pathlib import Path

from .corpus import Corpus, TicketRecord
from .errors import EmptyInputError, SchemaError

BITEXT_URL = (
    "https://huggingface.co/datasets/bitext/Bitext-customer-support-llm-chatbot-training-dataset"
    "/resolve/main/Bitext_Sample_Customer_Support_Training_Dataset_27K_responses-v11.csv"
)
BITEXT_ENV = "BITEXT_CSV"
BITEXT_COLUMNS = ("instruction", "intent", "response")


def default_bitext_path() -> Path:
    return Path(os.environ.get(BITEXT_ENV) or Path.home() / ".cache" / "resolvrec" / "bitext.csv")


def fetch_bitext(path: str | os.PathLike | None = None, url: str = BITEXT_URL, timeout: float = 30.0) -> Path:
    """Return a local copy of the CSV, downloading it once if missing."""
    path = Path(path) if path is not None else default_bitext_path()
    if path.exists():
        return path
    path.parent.mkdir(parents=True, exist_ok=True)
    with urllib.request.urlopen(url, timeout=timeout) as resp:
        data = resp.read()
    tmp = path.with_suffix(".part")
    tmp.write_bytes(data)
    os.replace(tmp, path)
    return path


def load_bitext(source) -> Corpus:
    """instruction -> description, response -> resolution text, intent -> resolution id.

    Incident ids are ``BT<row>`` since the dataset has no id column.
    """
    if isinstance(source, (str, os.PathLike)):
        text = Path(source).read_text(encoding="utf-8-sig")
    elif isinstance(source, (bytes, bytearray)):
        text = bytes(source).decode("utf-8-sig")
    else:
        text = source.read()
        text = text.decode("utf-8-sig") if isinstance(text, bytes) else text
    reader = csv.DictReader(io.StringIO(text, newline=""))
    missing = [c for c in BITEXT_COLUMNS if c not in (reader.fieldnames or ())]
    if missing:
        raise SchemaError(f"Bitext CSV lacks columns {missing}")
    records = []
    for rowno, row in enumerate(reader, start=2):
        desc = (row["instruction"] or "").strip()
        intent = (row["intent"] or "").strip()
        if not desc or not intent:
            continue
        records.append(TicketRecord(f"BT{rowno:06d}", desc, resolution_text=(row["response"] or "").strip() or None,
                                    resolution_id=intent))
    if not records:
        raise EmptyInputError("Bitext CSV has no usable rows")
    return Corpus(tuple(records))
