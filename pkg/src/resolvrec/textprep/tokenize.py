"""Tokenization, stopword removal and vocabulary normalization."""
from __future__ import annotations

import re
from functools import lru_cache
from importlib import resources
from typing import Iterable

from .porter import stem

NUM = "<num>"
_RUN = re.compile(r"[^\W_]+")


def tokenize(text: str) -> list[str]:
    """Lowercase and split on non-alphanumeric runs.

    Pure digit runs become ``<num>``. A mixed letter/digit run is kept whole
    when letters outnumber digits (error codes like ``e404x``), otherwise it
    becomes ``<num>``. Remaining tokens shorter than 2 characters are dropped.
    """
    out = []
    for run in _RUN.findall(text.lower()):
        digits = sum(ch.isdigit() for ch in run)
        if digits:
            if digits >= len(run) - digits:
                out.append(NUM)
                continue
        if len(run) >= 2:
            out.append(run)
    return out


def _read_lines(name: str) -> list[str]:
    text = resources.files(__package__).joinpath(name).read_text(encoding="utf-8")
    return [ln.strip() for ln in text.splitlines() if ln.strip() and not ln.startswith("#")]


@lru_cache(maxsize=None)
def default_stopwords() -> frozenset[str]:
    return frozenset(_read_lines("stopwords.txt"))


def load_stopwords(path) -> frozenset[str]:
    with open(path, encoding="utf-8") as fh:
        return frozenset(ln.strip().lower() for ln in fh if ln.strip())


@lru_cache(maxsize=None)
def lemma_table() -> dict[str, str]:
    return dict(ln.split("\t") for ln in _read_lines("lemmas.tsv"))


def normalize(tokens: Iterable[str], mode: str = "lemma+stem") -> list[str]:
    """Porter-stem tokens; ``lemma+stem`` first maps irregular forms."""
    if mode not in ("stem", "lemma+stem"):
        raise ValueError(f"unknown normalization mode {mode!r}")
    lemmas = lemma_table() if mode == "lemma+stem" else {}
    out = []
    for tok in tokens:
        if tok == NUM:
            out.append(tok)
            continue
        s = stem(lemmas.get(tok, tok))
        if s:
            out.append(s)
    return out


def remove_stopwords(tokens: Iterable[str], stopwords: frozenset[str] | None = None) -> list[str]:
    stopwords = default_stopwords() if stopwords is None else stopwords
    return [t for t in tokens if t not in stopwords]


def preprocess(
    text: str,
    mode: str = "lemma+stem",
    stopwords: frozenset[str] | None = None,
) -> list[str]:
    """The full text pipeline shared by training and inference."""
    return normalize(remove_stopwords(tokenize(text), stopwords), mode)
