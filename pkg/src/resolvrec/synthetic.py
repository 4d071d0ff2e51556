"""Seeded synthetic ticket corpora with a known description -> resolution mapping."""
from __future__ import annotations

from datetime import datetime, timedelta

import numpy as np

from .corpus import Corpus, TicketRecord
from .textprep import default_stopwords, normalize

_ONSETS = ("b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z")
_VOWELS = ("a", "e", "i", "o", "u")


def pseudo_words(n: int, seed: int, syllables: int = 3) -> list[str]:
    """``n`` pronounceable non-words whose normalized forms are pairwise distinct."""
    rng = np.random.default_rng(seed)
    words, stems = [], set()
    stop = default_stopwords()
    while len(words) < n:
        w = "".join(_ONSETS[rng.integers(len(_ONSETS))] + _VOWELS[rng.integers(len(_VOWELS))] for _ in range(syllables))
        w += _ONSETS[rng.integers(len(_ONSETS))]
        s = normalize([w])[0]
        if w in stop or s in stems:
            continue
        stems.add(s)
        words.append(w)
    return words


def synthetic_corpus(
    n: int = 1000,
    n_classes: int = 10,
    noise: float = 0.2,
    seed: int = 0,
    core_size: int = 15,
    noise_size: int = 40,
    length: tuple[int, int] = (8, 14),
    with_ids: bool = True,
    start: datetime = datetime(2023, 1, 1),
) -> Corpus:
    """Tickets whose description tokens come from a class-disjoint core vocabulary,
    with each token replaced by a shared noise word with probability ``noise``.

    Resolution text is drawn the same way from a second disjoint vocabulary, so
    clustering it recovers the classes. Labels are ``RES-<class>`` when
    ``with_ids``; otherwise only the free-text resolution is set.
    """
    rng = np.random.default_rng(seed)
    vocab = pseudo_words(n_classes * core_size * 2 + noise_size, seed)
    cores = [vocab[c * core_size : (c + 1) * core_size] for c in range(n_classes)]
    fixes = [vocab[(n_classes + c) * core_size : (n_classes + c + 1) * core_size] for c in range(n_classes)]
    pool = vocab[2 * n_classes * core_size :]
    width = len(str(n - 1))
    records = []
    classes = np.arange(n) % n_classes
    classes = classes[rng.permutation(n)]
    for i, c in enumerate(classes):
        L = int(rng.integers(length[0], length[1] + 1))
        core = rng.choice(cores[c], size=L)
        is_noise = rng.random(L) < noise
        words = [pool[rng.integers(len(pool))] if z else w for w, z in zip(core, is_noise)]
        fix = " ".join(rng.choice(fixes[c], size=6))
        submit = start + timedelta(minutes=int(rng.integers(0, 365 * 24 * 60)))
        resolved = submit + timedelta(minutes=int(rng.integers(30, 72 * 60)))
        records.append(
            TicketRecord(
                incident_id=f"INC{i:0{width}d}",
                description=" ".join(words),
                submit_date=submit.replace(second=0),
                resolved_date=resolved.replace(second=0),
                resolution_text=f"Applied fix {fix}",
                resolution_id=f"RES-{c:02d}" if with_ids else None,
            )
        )
    return Corpus(tuple(records))


def gibberish(n_tokens: int = 12, seed: int = 12345) -> str:
    """Random letter strings that share no vocabulary with a synthetic corpus."""
    rng = np.random.default_rng(seed)
    letters = np.array(list("qxjwyhc"))
    return " ".join("".join(rng.choice(letters, size=int(rng.integers(5, 9)))) for _ in range(n_tokens))
