import io
import json
import struct
from dataclasses import replace

import numpy as np
import pytest

from resolvrec import AppConfig, TicketRecord, train_pipeline
from resolvrec.corpus import Corpus
from resolvrec.engine import (
    LOG_FIELDS,
    PredictionLogEntry,
    PredictionLogger,
    bundle_bytes,
    confidence_of,
    crc64,
    drift_score,
    evaluate,
    js_divergence,
    knn_similar,
    load_bundle,
    log_prediction,
    predict,
    predict_many,
    save_bundle,
)
from resolvrec.engine.inference import nearest
from resolvrec.errors import CorruptionError, EmptyInputError, InvalidTicketError, StageError, TooFewRecentError, VersionError
from resolvrec.synthetic import synthetic_corpus

from conftest import fast_config


def test_crc64_xz_check_value():
    assert crc64(b"123456789") == 0x995DC9BBDF1939FA
    assert crc64(b"") == 0


def test_labels_present_means_no_labeling(small_bundle):
    assert small_bundle.labeling is None
    assert small_bundle.label_space == ("RES-00", "RES-01", "RES-02", "RES-03")


def test_free_text_resolutions_get_synthetic_labels():
    corpus = synthetic_corpus(n=200, n_classes=4, seed=5, with_ids=False)
    b = train_pipeline(corpus, fast_config())
    assert b.labeling is not None and b.labeling.k == 10
    assert all(l.startswith("RSYN-") for l in b.label_space)
    assert len(b.labeling.assignment) == 200


def test_stage_errors_name_the_stage():
    corpus = Corpus(tuple(TicketRecord(f"T{i}", "same words", resolution_id="A") for i in range(6)))
    with pytest.raises(StageError) as info:
        train_pipeline(corpus, fast_config())
    assert info.value.stage


def test_confidence_arithmetic():
    assert confidence_of([0.5, 0.3, 0.1, 0.1], 3) == pytest.approx(0.9)
    assert confidence_of(np.full(20, 1 / 20), 3) == pytest.approx(0.15)


def test_predict_consistency_and_gate(small_bundle, small_corpus):
    tickets = [r.description for r in small_corpus[:40]] + ["zzqx vlorp", "printer"]
    for thr in (0.3, 0.95, 1.0):
        for res in predict_many(small_bundle, tickets, threshold=thr):
            probs = [r.probability for r in res.ranked]
            assert sum(probs) == pytest.approx(1.0, abs=1e-6)
            assert res.confidence == pytest.approx(min(1.0, sum(sorted(probs)[::-1][:3])), abs=1e-12)
            assert res.low_confidence == (res.confidence < thr)
            assert bool(res.fallback) == res.low_confidence
            assert 0.0 <= res.confidence <= 1.0
            ids = [r.resolution_id for r in res.ranked]
            keyed = sorted(zip(probs, ids), key=lambda t: (-t[0], t[1]))
            assert [i for _, i in keyed] == ids


def test_forced_flag_returns_self_in_fallback(small_bundle, small_corpus):
    rec = next(r for r in small_corpus if r.incident_id in set(small_bundle.train_ids))
    res = predict(small_bundle, rec.description, threshold=1.01)
    assert res.low_confidence
    top = res.fallback[0]
    assert top.similarity == pytest.approx(1.0, abs=1e-9)
    twins = [r.incident_id for r in small_corpus if r.description == rec.description]
    assert top.incident_id in twins


def test_empty_description_invalid(small_bundle):
    with pytest.raises(InvalidTicketError):
        predict(small_bundle, "   ")


def test_knn_rules(small_bundle):
    n = len(small_bundle.train_ids)
    assert len(knn_similar(small_bundle, "printer jam", k=n + 50)) == n
    zero = nearest(small_bundle, small_bundle.knn_matrix, np.zeros(small_bundle.knn_matrix.shape[1]), 5)
    assert [z.similarity for z in zero] == [0.0] * 5
    assert [z.incident_id for z in zero] == sorted(small_bundle.train_ids)[:5]
    q = small_bundle.knn_matrix[7] * 3.0
    first = nearest(small_bundle, small_bundle.knn_matrix, q, 1)[0]
    assert first.similarity == pytest.approx(1.0, abs=1e-12)


def test_knn_against_independent_scan(small_bundle, small_corpus):
    M = small_bundle.knn_matrix
    ids = list(small_bundle.train_ids)
    from resolvrec.textprep import embed_text

    for rec in list(small_corpus)[:100]:
        q = embed_text(small_bundle.tokens(rec.description), small_bundle.wordvec)
        got = knn_similar(small_bundle, rec.description, k=10)
        sims = [float(np.dot(row, q) / (np.linalg.norm(row) * np.linalg.norm(q))) for row in M]
        ref = sorted(range(len(ids)), key=lambda j: (-round(sims[j], 12), ids[j]))[:10]
        assert [g.incident_id for g in got] == [ids[j] for j in ref]
        np.testing.assert_allclose([g.similarity for g in got], [sims[j] for j in ref], atol=1e-12)


def test_round_trip_predictions(small_bundle, small_corpus):
    again = load_bundle(bundle_bytes(small_bundle))
    tickets = [r.description for r in small_corpus[:20]]
    assert predict_many(again, tickets, threshold=0.99) == predict_many(small_bundle, tickets, threshold=0.99)


def _header(data):
    magic, mlen, mcrc = struct.unpack_from("<4sQQ", data)
    return 20, mlen


def test_flipped_array_byte_is_corruption(small_bundle):
    data = bytearray(bundle_bytes(small_bundle))
    start, mlen = _header(data)
    data[start + mlen + 100] ^= 0x01
    with pytest.raises(CorruptionError, match="array"):
        load_bundle(bytes(data))


def test_flipped_manifest_byte_is_corruption(small_bundle):
    data = bytearray(bundle_bytes(small_bundle))
    data[30] ^= 0x20
    with pytest.raises(CorruptionError):
        load_bundle(bytes(data))


def test_future_version_rejected(small_bundle):
    data = bundle_bytes(small_bundle)
    start, mlen = _header(data)
    m = json.loads(data[start : start + mlen])
    m["format_version"] = 99
    head = json.dumps(m, sort_keys=True, separators=(",", ":")).encode()
    forged = struct.pack("<4sQQ", b"RRB\0", len(head), crc64(head)) + head + data[start + mlen :]
    with pytest.raises(VersionError):
        load_bundle(forged)


def test_bad_magic_and_truncation(small_bundle):
    data = bundle_bytes(small_bundle)
    with pytest.raises(CorruptionError):
        load_bundle(b"XXXX" + data[4:])
    with pytest.raises(CorruptionError):
        load_bundle(data[:-8])


def test_save_to_path_and_stream(small_bundle, tmp_path):
    p = tmp_path / "m.rrb"
    version = save_bundle(small_bundle, p)
    buf = io.BytesIO()
    save_bundle(small_bundle, buf)
    assert p.read_bytes() == buf.getvalue()
    assert load_bundle(p).bundle_version == version == small_bundle.bundle_version


def test_evaluate_invariants(small_bundle, small_corpus):
    test = small_corpus.subset(range(60))
    rep = evaluate(small_bundle, test)
    assert sum(rep.histogram_counts) == rep.n_evaluated == 60
    assert int(np.trace(rep.confusion)) == round(rep.accuracy * 60)
    np.testing.assert_array_equal(rep.confusion.sum(axis=1), [s.support for s in rep.per_label])
    assert sum(rep.volumes.values()) == 60
    assert rep.time_to_resolution["count"] == 60
    assert set(rep.base_accuracy) == {"lda", "siamese", "indexembed"}
    with pytest.raises(EmptyInputError):
        evaluate(small_bundle, Corpus(()))


def test_holdout_stored_in_summary(small_bundle):
    h = small_bundle.summary["holdout"]
    assert h["n_evaluated"] == small_bundle.summary["n_test"] == 40
    assert h["accuracy"] >= 0.9


def test_js_divergence_properties():
    rng = np.random.default_rng(0)
    for _ in range(50):
        p, q = rng.dirichlet(np.ones(6)), rng.dirichlet(np.ones(6))
        assert js_divergence(p, q) == pytest.approx(js_divergence(q, p), abs=1e-15)
        assert 0.0 <= js_divergence(p, q) <= np.log(2)


def test_drift_needs_window(small_bundle, small_corpus):
    with pytest.raises(TooFewRecentError):
        drift_score(small_bundle, list(small_corpus)[:5])


def test_prediction_log_lines(small_bundle, tmp_path):
    res = predict(small_bundle, "printer jam")
    buf = io.StringIO()
    e1 = PredictionLogEntry.from_result(res, 1.5)
    log_prediction(buf, e1)
    log_prediction(buf, PredictionLogEntry.from_result(res, 2.0))
    lines = buf.getvalue().splitlines()
    assert len(lines) == 2
    d = json.loads(lines[0])
    assert tuple(d) == LOG_FIELDS
    assert PredictionLogEntry(**d) == e1

    path = tmp_path / "pred.jsonl"
    with PredictionLogger(path) as log:
        for _ in range(20):
            log.log(res, 0.1)
    ts = [json.loads(l)["ts"] for l in path.read_text().splitlines()]
    assert len(ts) == 20 and ts == sorted(ts)


def test_disabled_base_model():
    cfg = fast_config()
    cfg = replace(cfg, ensemble=replace(cfg.ensemble, disabled=("indexembed",)))
    b = train_pipeline(synthetic_corpus(n=120, n_classes=3, seed=9), cfg)
    res = predict(b, "anything at all")
    assert "indexembed" not in res.diagnostics
    assert sum(r.probability for r in res.ranked) == pytest.approx(1.0)


def test_train_window_days():
    cfg = fast_config().override("train", window_days=200)
    b = train_pipeline(synthetic_corpus(n=200, n_classes=4, seed=3), cfg)
    assert b.summary["n_corpus"] < 200


def test_default_config_snapshot_round_trips(small_bundle):
    assert AppConfig.from_dict(small_bundle.config.to_dict()) == small_bundle.config
