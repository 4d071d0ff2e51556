"""End-to-end training: labels, base models, out-of-fold stacking, bundle assembly."""
from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from ..cluster import SyntheticLabeling, assign_resolution_ids
from ..config import AppConfig
from ..corpus import CleanPolicy, Corpus, clean, split, window
from ..encoders import (
    AugmentPolicy,
    IndexEmbedModel,
    SiameseConfig,
    SiameseModel,
    augment,
    indexembed_proba,
    indexembed_train,
    siamese_predict,
    siamese_train,
)
from ..ensemble import BASE_MODELS, ensemble_predict, logreg_fit, meta_feature_matrix
from ..errors import EmptyInputError, InfeasibleError, ResolvRecError, StageError
from ..textprep import (
    NgramConfig,
    Vocabulary,
    WordVectorTable,
    build_vocab,
    default_stopwords,
    embed_text,
    load_stopwords,
    load_word_vectors,
    preprocess,
)
from ..topics import LdaModel, TopicResolutionTable, build_topic_resolution_table, dominant_topics, lda_fit, lda_infer
from .bundle import ModelBundle, bundle_bytes

N_AUGMENT = 2  # synthetic copies per single-example label


def _unit_rows(M: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(M, axis=1, keepdims=True)
    return np.where(norms > 0, M / np.where(norms > 0, norms, 1.0), 0.0)


class _Stage:
    def __init__(self, name: str, progress: Callable[[str], None] | None):
        self.name = name
        if progress is not None:
            progress(name)

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        if exc is not None and not isinstance(exc, StageError) and isinstance(exc, (ResolvRecError, ValueError)):
            raise StageError(self.name, exc) from exc
        return False


@dataclass
class _Docs:
    """Preprocessed documents; every base model reads the same token stream."""

    ids: list[str]
    tokens: list[list[str]]
    token_ids: list[list[int]]
    embeds: np.ndarray  # (n, wv_dim) word-vector means
    vocab: Vocabulary
    wordvec: WordVectorTable


@dataclass
class _BaseModels:
    lda: LdaModel
    table: TopicResolutionTable
    siamese: SiameseModel | None
    indexembed: IndexEmbedModel | None
    ref_ids: list[str]  # sorted ids backing the cold-start lookup
    ref_unit: np.ndarray


def _thetas(lda: LdaModel, token_ids: Sequence[Sequence[int]], sweeps: int, seed: int) -> np.ndarray:
    return np.array([lda_infer(lda, ids, sweeps, seed) for ids in token_ids])


def _spread(labels: Sequence[str], probs: np.ndarray, col: dict[str, int], C: int) -> np.ndarray:
    """Place probabilities over a sub-label set into the full label space."""
    out = np.zeros((probs.shape[0], C))
    out[:, [col[l] for l in labels]] = probs
    return out


def _fit_base(docs: _Docs, rows: np.ndarray, y: list[str], text_vocab_size: int, cfg: AppConfig,
              disabled: Sequence[str]) -> _BaseModels:
    """Fit LDA, Siamese and index embeddings on ``rows`` of ``docs``."""
    lcfg = cfg.lda
    labels = [y[i] for i in rows]
    K = lcfg.K or len(set(y))
    lda = lda_fit([docs.token_ids[i] for i in rows], K, lcfg.alpha, lcfg.beta, lcfg.sweeps,
                  cfg.seed("lda"), V=text_vocab_size)
    table = build_topic_resolution_table(lda, labels)

    order = sorted(rows, key=lambda i: docs.ids[i])
    ref_ids = [docs.ids[i] for i in order]
    ref_unit = _unit_rows(docs.embeds[order])

    siamese = None
    if "siamese" not in disabled:
        theta = _thetas(lda, [docs.token_ids[i] for i in rows], lcfg.infer_sweeps, cfg.seed("infer"))
        X = np.hstack([theta, docs.embeds[rows]])
        X, lab, mask = _augment_singletons(X, labels, [docs.tokens[i] for i in rows], lda, docs, cfg)
        sc = cfg.siamese
        scfg = SiameseConfig(sc.margin, sc.lr, sc.epochs, sc.batch_size, cfg.seed("siamese"),
                             sc.freeze and sc.fine_tune_epochs > 0, sc.fine_tune_epochs)
        siamese = siamese_train(X, lab, scfg, prototype_mask=mask)

    indexembed = None
    if "indexembed" not in disabled:
        ic = cfg.indexembed
        pairs = [(docs.ids[i], y[i]) for i in rows]
        indexembed = indexembed_train(pairs, ic.neg_k, ic.d, ic.lr, ic.epochs, cfg.seed("indexembed"))
    return _BaseModels(lda, table, siamese, indexembed, ref_ids, ref_unit)


def _augment_singletons(X, labels, tokens, lda: LdaModel, docs: _Docs, cfg: AppConfig):
    """Add perturbed copies of single-example labels so triplets have positives."""
    counts = Counter(labels)
    singles = [j for j, l in enumerate(labels) if counts[l] == 1]
    mask = np.ones(len(labels), dtype=bool)
    if not singles:
        return X, labels, mask
    terms = docs.vocab.terms
    t2i = docs.vocab.term_to_id
    topics = dominant_topics(lda)
    rows, lab = [], []
    for j in singles:
        pool = tuple(terms[w] for w in lda.top_words(int(topics[j]), 20))
        policy = AugmentPolicy(pool)
        for c in range(N_AUGMENT):
            toks = augment(tokens[j], policy, seed=cfg.seed("augment") * 1000003 + j * N_AUGMENT + c)
            ids = [t2i[t] for t in toks if t in t2i]
            theta = lda_infer(lda, ids, cfg.lda.infer_sweeps, cfg.seed("infer"))
            rows.append(np.concatenate([theta, embed_text(toks, docs.wordvec)]))
            lab.append(labels[j])
    X = np.vstack([X, np.array(rows)])
    return X, list(labels) + lab, np.concatenate([mask, np.zeros(len(rows), dtype=bool)])


def base_probabilities(base: _BaseModels, docs: _Docs, rows: np.ndarray, label_space: Sequence[str],
                       cfg: AppConfig, disabled: Sequence[str], use_ids: bool = True):
    """(n, C) probability blocks per base model; ``None`` for disabled models.

    ``use_ids=False`` forces index-embedding cold start (held-out rows).
    """
    C = len(label_space)
    col = {l: j for j, l in enumerate(label_space)}
    theta = _thetas(base.lda, [docs.token_ids[i] for i in rows], cfg.lda.infer_sweeps, cfg.seed("infer"))
    out = {}
    if "lda" in disabled:
        out["lda"] = None
    else:
        S = base.table.share_matrix(label_space)
        out["lda"] = _normalize_rows(theta @ S)
    if base.siamese is None:
        out["siamese"] = None
    else:
        P = siamese_predict(base.siamese, np.hstack([theta, docs.embeds[rows]]))
        out["siamese"] = _normalize_rows(_spread(base.siamese.prototypes.labels, np.atleast_2d(P), col, C))
    if base.indexembed is None:
        out["indexembed"] = None
    else:
        P = np.array([
            indexembed_proba(base.indexembed, docs.ids[i] if use_ids else None, docs.embeds[i],
                             base.ref_ids, base.ref_unit)
            for i in rows
        ])
        out["indexembed"] = _normalize_rows(_spread(base.indexembed.resolution_ids, P, col, C))
    return out, theta


def _normalize_rows(P: np.ndarray) -> np.ndarray:
    s = P.sum(axis=1, keepdims=True)
    C = P.shape[1]
    return np.where(s > 0, P / np.where(s > 0, s, 1.0), 1.0 / C)


def _blocks_or_uniform(blocks: dict, n: int, C: int) -> list[np.ndarray]:
    return [blocks[m] if blocks[m] is not None else np.full((n, C), 1.0 / C) for m in BASE_MODELS]


def _fold_assignment(y_idx: np.ndarray, folds: int, seed: int) -> np.ndarray:
    """Stratified fold ids: each label's members are shuffled then dealt round-robin."""
    rng = np.random.default_rng(seed)
    fold = np.empty(y_idx.size, dtype=np.int64)
    offset = 0
    for c in np.unique(y_idx):
        members = np.flatnonzero(y_idx == c)
        members = members[rng.permutation(members.size)]
        fold[members] = (np.arange(members.size) + offset) % folds
        offset += members.size
    return fold


def _resolve_labels(corpus: Corpus, cfg: AppConfig, progress) -> tuple[Corpus, SyntheticLabeling | None]:
    if all(r.resolution_id is not None for r in corpus):
        return corpus, None
    with _Stage("label", progress):
        c = cfg.cluster
        labeling = assign_resolution_ids(corpus, c.method, c.k, cfg.seed("cluster"),
                                         cfg.text.min_df, cfg.text.max_df_ratio,
                                         n_init=c.n_init, features=c.features,
                                         ngram_range=(1, cfg.text.ngram_max))
        # records lacking resolution text cannot be labelled and leave training
        kept = [r for r in corpus if r.incident_id in labeling.assignment]
        relabelled = Corpus(tuple(kept)).with_labels(labeling.assignment)
        # clusters overwrite partial ground truth so the label space is uniform
        return relabelled, labeling


def _word_table(cfg: AppConfig) -> WordVectorTable:
    t = cfg.text
    kw = dict(subword_min=t.subword_min, subword_max=t.subword_max, hash_buckets=t.hash_buckets,
              seed=cfg.seed("wordvec"))
    if t.word_vectors_path:
        return load_word_vectors(t.word_vectors_path, **kw)
    return WordVectorTable(dim=t.wv_dim, **kw)


def train_pipeline(corpus: Corpus, config: AppConfig | None = None,
                   progress: Callable[[str], None] | None = None) -> ModelBundle:
    """clean -> label (if needed) -> split -> vocabulary -> base models -> stacking -> bundle.

    ``progress`` receives each stage name as it starts. Failures are raised as
    :class:`StageError` naming the stage.
    """
    cfg = config or AppConfig()
    with _Stage("clean", progress):
        need_text = cfg.train.require_resolution or any(r.resolution_id is None for r in corpus)
        corpus, report = clean(corpus, CleanPolicy(require_resolution=need_text))
        corpus = window(corpus, cfg.train.window_days)
    corpus, labeling = _resolve_labels(corpus, cfg, progress)
    with _Stage("split", progress):
        parts = split(corpus, cfg.split.ratio, cfg.seed("split"), cfg.split.mode)
        train = parts.train
        if len(train) == 0:
            raise EmptyInputError("training split is empty")

    with _Stage("vocab", progress):
        stopwords = load_stopwords(cfg.text.stopwords_path) if cfg.text.stopwords_path else None
        sw = stopwords if stopwords is not None else default_stopwords()
        records = sorted(train, key=lambda r: r.incident_id)
        tokens = [preprocess(r.description, cfg.text.mode, sw) for r in records]
        vocab = build_vocab(tokens, cfg.text.min_df, cfg.text.max_df_ratio, NgramConfig(1, 1))
        wordvec = _word_table(cfg)
        docs = _Docs(
            ids=[r.incident_id for r in records],
            tokens=tokens,
            token_ids=[vocab.ids(t) for t in tokens],
            embeds=np.array([embed_text(t, wordvec) for t in tokens]).reshape(len(tokens), wordvec.dim),
            vocab=vocab,
            wordvec=wordvec,
        )
        y = [r.resolution_id for r in records]
        label_space = tuple(sorted(set(y)))
        if len(label_space) < 2:
            raise InfeasibleError("training split holds a single resolution id; nothing to rank")
        col = {l: j for j, l in enumerate(label_space)}
        y_idx = np.array([col[l] for l in y])
        C = len(label_space)

    disabled = tuple(m for m in BASE_MODELS if m in cfg.ensemble.disabled)
    n = len(records)
    with _Stage("oof", progress):
        folds = _fold_assignment(y_idx, cfg.ensemble.folds, cfg.seed("folds"))
        meta = np.zeros((n, 3 * C + 3))
        oof = {m: np.zeros((n, C)) for m in BASE_MODELS}
        for f in range(cfg.ensemble.folds):
            held = np.flatnonzero(folds == f)
            fit_rows = np.flatnonzero(folds != f)
            if held.size == 0:
                continue
            if len({y[i] for i in fit_rows}) < 2:
                raise InfeasibleError(f"fold {f} leaves fewer than two labels to train on")
            base = _fit_base(docs, fit_rows, y, len(vocab), cfg, disabled)
            blocks, _ = base_probabilities(base, docs, held, label_space, cfg, disabled, use_ids=False)
            full = _blocks_or_uniform(blocks, held.size, C)
            for m, b in zip(BASE_MODELS, full):
                oof[m][held] = b
            meta[held] = meta_feature_matrix(*full)

    with _Stage("ensemble", progress):
        e = cfg.ensemble
        logreg = logreg_fit(meta, y_idx, C, e.l2, e.lr, e.epochs, cfg.seed("ensemble"), e.batch_size)

    with _Stage("base_models", progress):
        all_rows = np.arange(n)
        base = _fit_base(docs, all_rows, y, len(vocab), cfg, disabled)
        theta = _thetas(base.lda, docs.token_ids, cfg.lda.infer_sweeps, cfg.seed("infer"))
        if base.siamese is not None:
            knn_siamese = base.siamese.encode(np.hstack([theta, docs.embeds]))
        else:
            knn_siamese = np.zeros((n, 0))

    with _Stage("assemble", progress):
        label_texts = _label_texts(records, y)
        oof_acc = {m: float(np.mean(np.argmax(oof[m], axis=1) == y_idx)) for m in BASE_MODELS if m not in disabled}
        oof_acc["ensemble"] = float(np.mean(np.argmax(ensemble_predict(logreg, meta), axis=1) == y_idx))
        bundle = ModelBundle(
            config=cfg,
            label_space=label_space,
            label_texts=label_texts,
            vocab=vocab,
            wordvec=wordvec,
            lda=base.lda,
            topic_table=base.table,
            siamese=base.siamese or _null_siamese(C),
            indexembed=base.indexembed or _null_indexembed(label_space),
            logreg=logreg,
            train_ids=tuple(docs.ids),
            train_resolutions=tuple(r.resolution_text or label_texts[r.resolution_id] for r in records),
            knn_matrix=base.ref_unit,
            knn_siamese=knn_siamese,
            drift_baseline=theta.mean(axis=0),
            labeling=labeling,
            stopwords=stopwords,
            disabled=disabled,
            summary={
                "n_corpus": len(corpus),
                "n_train": n,
                "n_test": len(parts.test),
                "clean": {"n_in": report.n_in, "n_out": report.n_out, "dropped": dict(report.dropped)},
                "stratified": parts.stratified,
                "test_ids": sorted(parts.test.ids),
                "train_label_counts": {l: int(c) for l, c in sorted(Counter(y).items())},
                "oof_accuracy": oof_acc,
                "K": base.lda.K,
            },
        )

    if len(parts.test):
        from .metrics import evaluate  # local import: metrics depends on inference

        with _Stage("holdout", progress):
            test = parts.test.with_labels(labeling.assignment) if labeling else parts.test
            report_ = evaluate(bundle, test)
            bundle.summary["holdout"] = report_.to_dict()
    bundle_bytes(bundle)  # stamps the content-hash version
    return bundle


def _label_texts(records, y) -> dict[str, str]:
    """Most frequent resolution text per label; ties by lexicographic order."""
    texts: dict[str, Counter] = {}
    for r, l in zip(records, y):
        if r.resolution_text:
            texts.setdefault(l, Counter())[r.resolution_text] += 1
    out = {}
    for l in sorted(set(y)):
        c = texts.get(l)
        out[l] = min(c.items(), key=lambda kv: (-kv[1], kv[0]))[0] if c else l
    return out


def _null_siamese(C: int) -> SiameseModel:
    from ..encoders import Layer, Mlp, PrototypeSet

    mlp = Mlp([Layer(np.zeros((1, 1)), np.zeros(1), "identity")])
    return SiameseModel(mlp, np.zeros(1), np.ones(1), PrototypeSet((), np.zeros((0, 1))), [])


def _null_indexembed(label_space) -> IndexEmbedModel:
    return IndexEmbedModel(np.zeros((0, 1)), np.zeros((0, 1)), (), ())
