"""Word vectors with hashed character n-gram fallback for unknown tokens."""
from __future__ import annotations

import hashlib
import io
import os
import threading
from typing import Mapping, Sequence

import numpy as np

from ..errors import FormatError


def stable_hash(text: str) -> int:
    return int.from_bytes(hashlib.blake2b(text.encode("utf-8"), digest_size=8).digest(), "little")


def char_ngrams(token: str, min_n: int = 3, max_n: int = 5) -> list[str]:
    padded = f"<{token}>"
    out = []
    for n in range(min_n, max_n + 1):
        out.extend(padded[i : i + n] for i in range(len(padded) - n + 1))
    return out


class WordVectorTable:
    """Token -> dense vector lookup.

    Known tokens come from ``word_vectors``. Any other token is the mean of
    its character n-gram vectors, each n-gram hashed into one of
    ``hash_buckets`` pseudo-random unit vectors. The table is immutable after
    construction; the OOV cache only memoizes a pure function.
    """

    def __init__(
        self,
        dim: int = 100,
        word_vectors: Mapping[str, np.ndarray] | None = None,
        subword_min: int = 3,
        subword_max: int = 5,
        hash_buckets: int = 1 << 18,
        seed: int = 0,
    ):
        if dim < 1 or hash_buckets < 1 or not 1 <= subword_min <= subword_max:
            raise ValueError("invalid word-vector table parameters")
        self.dim = dim
        self.subword_min = subword_min
        self.subword_max = subword_max
        self.hash_buckets = hash_buckets
        self.seed = seed
        self.word_vectors = {}
        for tok, vec in (word_vectors or {}).items():
            vec = np.asarray(vec, dtype=np.float64)
            if vec.shape != (dim,):
                raise FormatError(f"vector for {tok!r} has shape {vec.shape}, expected ({dim},)")
            self.word_vectors[tok] = vec
        self._cache: dict[str, np.ndarray] = {}
        self._lock = threading.Lock()

    def params(self) -> dict:
        return {
            "dim": self.dim,
            "subword_min": self.subword_min,
            "subword_max": self.subword_max,
            "hash_buckets": self.hash_buckets,
            "seed": self.seed,
        }

    def bucket_vector(self, ngram: str) -> np.ndarray:
        bucket = stable_hash(ngram) % self.hash_buckets
        v = np.random.default_rng([self.seed, bucket]).standard_normal(self.dim)
        return v / np.linalg.norm(v)

    def vector(self, token: str) -> np.ndarray:
        vec = self.word_vectors.get(token)
        if vec is not None:
            return vec
        vec = self._cache.get(token)
        if vec is None:
            grams = char_ngrams(token, self.subword_min, self.subword_max)
            if not grams:
                grams = [f"<{token}>"]
            vec = np.mean([self.bucket_vector(g) for g in grams], axis=0)
            vec.setflags(write=False)
            with self._lock:
                self._cache[token] = vec
        return vec


def load_word_vectors(source, **kwargs) -> WordVectorTable:
    """Parse the ``.vec`` text layout: ``<count> <dim>`` header, then ``token v1 .. vdim`` rows."""
    if isinstance(source, (str, os.PathLike)):
        with open(source, "rb") as fh:
            data = fh.read()
    elif isinstance(source, (bytes, bytearray)):
        data = bytes(source)
    else:
        data = source.read()
    text = data.decode("utf-8") if isinstance(data, (bytes, bytearray)) else data
    lines = io.StringIO(text)
    header = lines.readline().split()
    if len(header) != 2 or not all(h.isdigit() for h in header):
        raise FormatError("line 1: expected '<count> <dim>' header")
    dim = int(header[1])
    vectors = {}
    for lineno, line in enumerate(lines, start=2):
        parts = line.rstrip("\n").rstrip().split(" ")
        if not parts or parts == [""]:
            continue
        if len(parts) - 1 != dim:
            raise FormatError(f"line {lineno}: expected {dim} values, got {len(parts) - 1}")
        try:
            vectors[parts[0]] = np.array([float(x) for x in parts[1:]])
        except ValueError as exc:
            raise FormatError(f"line {lineno}: {exc}") from None
    return WordVectorTable(dim=dim, word_vectors=vectors, **kwargs)


def embed_text(tokens: Sequence[str], table: WordVectorTable) -> np.ndarray:
    if not tokens:
        return np.zeros(table.dim)
    # sorted so the float summation order, hence the result, is permutation-invariant
    return np.mean([table.vector(t) for t in sorted(tokens)], axis=0)
