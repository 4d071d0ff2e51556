"""The model bundle and its single-file ``.rrb`` archive format.

Layout::

    b"RRB\\x00"                      magic
    u64 manifest length              little-endian
    u64 CRC-64/XZ of the manifest
    manifest                         UTF-8 JSON, sorted keys
    array payloads                   little-endian float64, C order

Each array entry in the manifest records its offset (relative to the end of
the manifest), shape and CRC-64.
"""
from __future__ import annotations

import hashlib
import io
import json
import os
import struct
from dataclasses import dataclass, field
from typing import Any, BinaryIO, Mapping

import numba
import numpy as np

from ..cluster import SyntheticLabeling
from ..config import AppConfig
from ..encoders import IndexEmbedModel, Layer, Mlp, PrototypeSet, SiameseModel
from ..ensemble import LogRegModel
from ..errors import CorruptionError, VersionError
from ..textprep import Vocabulary, WordVectorTable, default_stopwords, preprocess
from ..topics import LdaModel, TopicResolutionTable

MAGIC = b"RRB\x00"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sQQ")

_CRC64_POLY = np.uint64(0xC96C5795D7870F42)


def _crc64_table() -> np.ndarray:
    table = np.zeros(256, dtype=np.uint64)
    for i in range(256):
        c = i
        for _ in range(8):
            c = (c >> 1) ^ 0xC96C5795D7870F42 if c & 1 else c >> 1
        table[i] = c
    return table


_TABLE = _crc64_table()


@numba.njit(cache=True)
def _crc64_update(crc, data, table):
    for b in data:
        crc = table[(crc ^ np.uint64(b)) & np.uint64(0xFF)] ^ (crc >> np.uint64(8))
    return crc


def crc64(data: bytes) -> int:
    """CRC-64/XZ (ECMA-182 polynomial, reflected, all-ones init and xor-out)."""
    buf = np.frombuffer(data, dtype=np.uint8)
    crc = _crc64_update(np.uint64(0xFFFFFFFFFFFFFFFF), buf, _TABLE)
    return int(crc ^ np.uint64(0xFFFFFFFFFFFFFFFF))


@dataclass
class ModelBundle:
    config: AppConfig
    label_space: tuple[str, ...]
    label_texts: dict[str, str]
    vocab: Vocabulary
    wordvec: WordVectorTable
    lda: LdaModel
    topic_table: TopicResolutionTable
    siamese: SiameseModel
    indexembed: IndexEmbedModel
    logreg: LogRegModel
    train_ids: tuple[str, ...]  # sorted
    train_resolutions: tuple[str, ...]  # resolution text per train id
    knn_matrix: np.ndarray  # unit word-vector means, rows follow train_ids
    knn_siamese: np.ndarray  # unit Siamese embeddings, same rows
    drift_baseline: np.ndarray  # mean training topic distribution
    labeling: SyntheticLabeling | None = None
    stopwords: frozenset[str] | None = None  # None means the packaged list
    disabled: tuple[str, ...] = ()
    summary: dict[str, Any] = field(default_factory=dict)
    format_version: int = FORMAT_VERSION
    bundle_version: str = ""

    def tokens(self, text: str) -> list[str]:
        sw = self.stopwords if self.stopwords is not None else default_stopwords()
        return preprocess(text, self.config.text.mode, sw)

    @property
    def C(self) -> int:
        return len(self.label_space)


# ---- encoding -------------------------------------------------------------


class _Arrays:
    def __init__(self):
        self.entries: list[dict] = []
        self.chunks: list[bytes] = []
        self.offset = 0

    def add(self, name: str, arr) -> None:
        a = np.ascontiguousarray(np.asarray(arr, dtype="<f8"))
        data = a.tobytes()
        self.entries.append(
            {"name": name, "shape": list(a.shape), "offset": self.offset, "nbytes": len(data), "crc64": f"{crc64(data):016x}"}
        )
        self.chunks.append(data)
        self.offset += len(data)


def _manifest_and_arrays(b: ModelBundle) -> tuple[dict, _Arrays]:
    arrays = _Arrays()
    arrays.add("lda.topic_word_counts", b.lda.topic_word_counts)
    arrays.add("lda.topic_totals", b.lda.topic_totals)
    arrays.add("lda.doc_topic_counts", b.lda.doc_topic_counts)
    for i, layer in enumerate(b.siamese.mlp.layers):
        arrays.add(f"siamese.layer{i}.W", layer.W)
        arrays.add(f"siamese.layer{i}.b", layer.b)
    arrays.add("siamese.feature_mean", b.siamese.feature_mean)
    arrays.add("siamese.feature_scale", b.siamese.feature_scale)
    arrays.add("siamese.prototypes", b.siamese.prototypes.vectors)
    arrays.add("indexembed.issues", b.indexembed.issue_embeddings)
    arrays.add("indexembed.resolutions", b.indexembed.resolution_embeddings)
    arrays.add("logreg.weights", b.logreg.weights)
    arrays.add("logreg.bias", b.logreg.bias)
    arrays.add("knn.wordvec", b.knn_matrix)
    arrays.add("knn.siamese", b.knn_siamese)
    arrays.add("drift.baseline", b.drift_baseline)
    wv = b.wordvec
    wv_words = None
    if wv.word_vectors:
        wv_words = sorted(wv.word_vectors)
        arrays.add("wordvec.vectors", np.array([wv.word_vectors[w] for w in wv_words]))

    manifest = {
        "format_version": b.format_version,
        "config": b.config.to_dict(),
        "label_space": list(b.label_space),
        "label_texts": dict(sorted(b.label_texts.items())),
        "vocab": b.vocab.to_dict(),
        "wordvec": {"params": wv.params(), "words": wv_words},
        "lda": {"K": b.lda.K, "alpha": b.lda.alpha, "beta": b.lda.beta, "seed": b.lda.seed,
                "sweeps": b.lda.sweeps, "vocab_ref": b.lda.vocab_ref},
        "topic_table": b.topic_table.to_list(),
        "siamese": {
            "layers": [{"activation": l.activation, "frozen": l.frozen} for l in b.siamese.mlp.layers],
            "prototype_labels": list(b.siamese.prototypes.labels),
            "loss_trace": list(b.siamese.loss_trace),
        },
        "indexembed": {"issue_ids": list(b.indexembed.issue_ids), "resolution_ids": list(b.indexembed.resolution_ids)},
        "logreg": {"l2": b.logreg.l2, "lr": b.logreg.lr, "epochs": b.logreg.epochs, "seed": b.logreg.seed,
                   "loss_trace": list(b.logreg.loss_trace)},
        "train_ids": list(b.train_ids),
        "train_resolutions": list(b.train_resolutions),
        "labeling": b.labeling.to_dict() if b.labeling is not None else None,
        "stopwords": sorted(b.stopwords) if b.stopwords is not None else None,
        "disabled": list(b.disabled),
        "summary": b.summary,
        "arrays": arrays.entries,
    }
    return manifest, arrays


def _dump(manifest: dict) -> bytes:
    return json.dumps(manifest, sort_keys=True, separators=(",", ":"), ensure_ascii=False).encode("utf-8")


def bundle_bytes(bundle: ModelBundle) -> bytes:
    """Serialize; also sets ``bundle.bundle_version`` (content hash prefix)."""
    manifest, arrays = _manifest_and_arrays(bundle)
    payload = b"".join(arrays.chunks)
    digest = hashlib.sha256(_dump(manifest) + payload).hexdigest()[:16]
    manifest["bundle_version"] = digest
    bundle.bundle_version = digest
    head = _dump(manifest)
    return _HEADER.pack(MAGIC, len(head), crc64(head)) + head + payload


def save_bundle(bundle: ModelBundle, sink: str | os.PathLike | BinaryIO) -> str:
    """Write the archive; a path is written via a temp file and renamed. Returns the version."""
    data = bundle_bytes(bundle)
    if hasattr(sink, "write"):
        sink.write(data)
    else:
        tmp = f"{os.fspath(sink)}.tmp"
        with open(tmp, "wb") as fh:
            fh.write(data)
        os.replace(tmp, sink)
    return bundle.bundle_version


# ---- decoding -------------------------------------------------------------


def _read_source(source) -> bytes:
    if isinstance(source, (bytes, bytearray, memoryview)):
        return bytes(source)
    if hasattr(source, "read"):
        return source.read()
    with open(source, "rb") as fh:
        return fh.read()


def load_bundle(source) -> ModelBundle:
    data = _read_source(source)
    if len(data) < _HEADER.size:
        raise CorruptionError("file too short for a bundle header")
    magic, mlen, mcrc = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise CorruptionError("not a model bundle (bad magic)")
    start = _HEADER.size
    head = data[start : start + mlen]
    if len(head) != mlen or crc64(head) != mcrc:
        raise CorruptionError("manifest checksum mismatch")
    try:
        manifest = json.loads(head.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CorruptionError(f"unreadable manifest: {exc}") from None
    version = manifest.get("format_version")
    if version != FORMAT_VERSION:
        raise VersionError(f"unsupported bundle format_version {version!r} (supported: {FORMAT_VERSION})")
    base = start + mlen
    arrays = {}
    for e in manifest["arrays"]:
        lo = base + e["offset"]
        chunk = data[lo : lo + e["nbytes"]]
        if len(chunk) != e["nbytes"] or f"{crc64(chunk):016x}" != e["crc64"]:
            raise CorruptionError(f"checksum mismatch in array {e['name']!r}")
        arrays[e["name"]] = np.frombuffer(chunk, dtype="<f8").astype(np.float64).reshape(e["shape"])
    if base + sum(e["nbytes"] for e in manifest["arrays"]) != len(data):
        raise CorruptionError("trailing or missing bytes after array section")
    return _assemble(manifest, arrays)


def _assemble(m: Mapping, a: Mapping[str, np.ndarray]) -> ModelBundle:
    vocab = Vocabulary.from_dict(m["vocab"])
    wv = m["wordvec"]
    vectors = None
    if wv["words"] is not None:
        vectors = {w: a["wordvec.vectors"][i].copy() for i, w in enumerate(wv["words"])}
    wordvec = WordVectorTable(word_vectors=vectors, **wv["params"])
    lm = m["lda"]
    lda = LdaModel(
        K=lm["K"], alpha=lm["alpha"], beta=lm["beta"],
        topic_word_counts=a["lda.topic_word_counts"].astype(np.int64),
        topic_totals=a["lda.topic_totals"].astype(np.int64),
        doc_topic_counts=a["lda.doc_topic_counts"].astype(np.int64),
        seed=lm["seed"], sweeps=lm["sweeps"], vocab_ref=lm["vocab_ref"],
    )
    sm = m["siamese"]
    layers = [
        Layer(a[f"siamese.layer{i}.W"].copy(), a[f"siamese.layer{i}.b"].copy(), spec["activation"], spec["frozen"])
        for i, spec in enumerate(sm["layers"])
    ]
    siamese = SiameseModel(
        Mlp(layers), a["siamese.feature_mean"].copy(), a["siamese.feature_scale"].copy(),
        PrototypeSet(tuple(sm["prototype_labels"]), a["siamese.prototypes"].copy()), list(sm["loss_trace"]),
    )
    ie = m["indexembed"]
    indexembed = IndexEmbedModel(
        a["indexembed.issues"].copy(), a["indexembed.resolutions"].copy(),
        tuple(ie["issue_ids"]), tuple(ie["resolution_ids"]),
    )
    lr = m["logreg"]
    logreg = LogRegModel(a["logreg.weights"].copy(), a["logreg.bias"].copy(), lr["l2"], lr["lr"],
                         lr["epochs"], lr["seed"], list(lr["loss_trace"]))
    return ModelBundle(
        config=AppConfig.from_dict(m["config"]),
        label_space=tuple(m["label_space"]),
        label_texts=dict(m["label_texts"]),
        vocab=vocab,
        wordvec=wordvec,
        lda=lda,
        topic_table=TopicResolutionTable.from_list(m["topic_table"]),
        siamese=siamese,
        indexembed=indexembed,
        logreg=logreg,
        train_ids=tuple(m["train_ids"]),
        train_resolutions=tuple(m["train_resolutions"]),
        knn_matrix=a["knn.wordvec"].copy(),
        knn_siamese=a["knn.siamese"].copy(),
        drift_baseline=a["drift.baseline"].copy(),
        labeling=SyntheticLabeling.from_dict(m["labeling"]) if m["labeling"] is not None else None,
        stopwords=frozenset(m["stopwords"]) if m["stopwords"] is not None else None,
        disabled=tuple(m["disabled"]),
        summary=m["summary"],
        format_version=m["format_version"],
        bundle_version=m["bundle_version"],
    )
