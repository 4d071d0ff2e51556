"""Acceptance suite. Each test carries ``criterion(n)``; the terminal summary
prints one PASS/FAIL line per criterion."""

import http.client
import itertools
import json
import os
import threading
import time
from collections import Counter

import jsonschema
import numpy as np
import pytest

from resolvrec import AppConfig, TicketRecord, train_pipeline
from resolvrec.bitext import default_bitext_path, fetch_bitext, load_bitext
from resolvrec.cluster import gmm_fit, kmeans_fit
from resolvrec.corpus import Corpus, split
from resolvrec.dashboard import load_schema
from resolvrec.encoders import triplet_loss
from resolvrec.encoders.indexembed import indexembed_loss
from resolvrec.engine import (
    DriftReport,
    bundle_bytes,
    drift_score,
    evaluate,
    js_divergence,
    load_bundle,
    predict,
    predict_many,
    save_bundle,
)
from resolvrec.ensemble import softmax_regression_loss
from resolvrec.service import make_server
from resolvrec.synthetic import gibberish, synthetic_corpus
from resolvrec.topics import lda_fit

from conftest import fast_config

crit = pytest.mark.criterion


# ---------------------------------------------------------------- 1


@crit(1)
def test_synthetic_end_to_end(trained, synthetic):
    bundle, elapsed = trained
    holdout = split(synthetic, 0.8, bundle.config.seed("split")).test
    rep = evaluate(bundle, holdout)
    print(f"\naccuracy={rep.accuracy:.4f} macro_p={rep.macro_precision:.4f} "
          f"macro_r={rep.macro_recall:.4f} train_seconds={elapsed:.1f}")
    assert rep.n_evaluated == 200
    assert rep.accuracy >= 0.95
    assert rep.macro_precision >= 0.90 and rep.macro_recall >= 0.90
    assert elapsed <= 300.0


# ---------------------------------------------------------------- 2


def _bitext_path():
    path = default_bitext_path()
    if not os.path.exists(path):
        try:
            fetch_bitext(path)
        except OSError as exc:
            pytest.fail(f"Bitext dataset unavailable at {path} and download failed ({exc}); "
                        f"set BITEXT_CSV to a local copy")
    return path


@crit(2)
def test_bitext_open_data_floor():
    corpus = load_bitext(_bitext_path())
    t0 = time.perf_counter()
    bundle = train_pipeline(corpus, AppConfig())
    elapsed = time.perf_counter() - t0
    h = bundle.summary["holdout"]
    base = h["base_accuracy"]
    print(f"\nn={len(corpus)} ensemble={h['accuracy']:.4f} base={base} seconds={elapsed:.0f}")
    assert h["accuracy"] >= 0.80
    assert h["accuracy"] >= max(base.values()) - 0.02
    assert elapsed <= 1200.0


# ---------------------------------------------------------------- 3


@crit(3)
def test_gibberish_ticket_is_flagged(bundle):
    res = predict(bundle, gibberish(), threshold=0.30, top_n=3)
    print(f"\nclasses={len(bundle.label_space)} gibberish confidence={res.confidence:.4f}")
    assert res.low_confidence
    assert len(res.fallback) > 0


@crit(3)
def test_verbatim_training_ticket_not_flagged(bundle, synthetic):
    train_ids = set(bundle.train_ids)
    rec = next(r for r in synthetic if r.incident_id in train_ids)
    res = predict(bundle, rec.description, threshold=0.30, top_n=3)
    assert not res.low_confidence and res.fallback == ()
    assert res.top.resolution_id == rec.resolution_id


# ---------------------------------------------------------------- 4


def _rel_err(analytic, numeric):
    a, n = np.ravel(analytic), np.ravel(numeric)
    scale = max(np.linalg.norm(a), np.linalg.norm(n))
    return 0.0 if scale == 0 else float(np.linalg.norm(a - n) / scale)


def _central_diff(f, x, h=1e-5):
    g = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        old = x[idx]
        x[idx] = old + h
        up = f()
        x[idx] = old - h
        down = f()
        x[idx] = old
        g[idx] = (up - down) / (2 * h)
    return g


@crit(4)
def test_triplet_loss_gradients():
    rng = np.random.default_rng(100)
    active = 0
    for _ in range(50):
        d = int(rng.integers(2, 8))
        a, p, n = (rng.normal(size=d) for _ in range(3))
        margin = float(rng.uniform(0.1, 2.0))
        _, ga, gp, gn = triplet_loss(a, p, n, margin)
        active += bool(np.any(ga))
        for x, g in ((a, ga), (p, gp), (n, gn)):
            num = _central_diff(lambda: triplet_loss(a, p, n, margin)[0], x)
            assert _rel_err(g, num) < 1e-4
    assert active >= 10


@crit(4)
def test_indexembed_loss_gradients():
    rng = np.random.default_rng(101)
    for _ in range(50):
        d, k = int(rng.integers(2, 9)), int(rng.integers(1, 6))
        u, v = rng.normal(size=d), rng.normal(size=d)
        negs = rng.normal(size=(k, d))
        _, gu, gv, gn = indexembed_loss(u, v, negs)
        for x, g in ((u, gu), (v, gv), (negs, gn)):
            num = _central_diff(lambda: indexembed_loss(u, v, negs)[0], x)
            assert _rel_err(g, num) < 1e-4


@crit(4)
def test_softmax_regression_gradients():
    rng = np.random.default_rng(102)
    for _ in range(50):
        n, C, F = int(rng.integers(2, 10)), int(rng.integers(2, 5)), int(rng.integers(2, 7))
        W, b = rng.normal(size=(C, F)), rng.normal(size=C)
        X, y = rng.normal(size=(n, F)), rng.integers(0, C, size=n)
        l2 = float(rng.uniform(0, 0.1))
        _, gW, gb = softmax_regression_loss(W, b, X, y, l2)
        for x, g in ((W, gW), (b, gb)):
            num = _central_diff(lambda: softmax_regression_loss(W, b, X, y, l2)[0], x)
            assert _rel_err(g, num) < 1e-4


# ---------------------------------------------------------------- 5


@crit(5)
def test_gmm_log_likelihood_non_decreasing():
    rng = np.random.default_rng(200)
    for i in range(20):
        k = int(rng.integers(2, 5))
        d = int(rng.integers(1, 4))
        centers = rng.normal(scale=4, size=(k, d))
        X = np.vstack([c + rng.normal(scale=rng.uniform(0.3, 1.5), size=(int(rng.integers(10, 40)), d))
                       for c in centers])
        trace = np.array(gmm_fit(X, k, seed=i, tol=0.0, max_iter=60).log_likelihood_trace)
        assert len(trace) > 1
        assert np.all(np.diff(trace) >= -1e-7), np.diff(trace).min()


@crit(5)
def test_lda_count_conservation_every_sweep():
    rng = np.random.default_rng(201)
    for c in range(10):
        V, K = int(rng.integers(5, 30)), int(rng.integers(1, 6))
        docs = [list(rng.integers(0, V, size=int(rng.integers(1, 25)))) for _ in range(int(rng.integers(3, 20)))]
        lengths = np.array([len(d) for d in docs])
        word_counts = np.bincount(np.concatenate(docs), minlength=V)
        sweeps = []

        def check(sweep, n_wk, n_k, n_dk):
            sweeps.append(sweep)
            assert n_wk.shape == (V, K) and n_dk.shape == (len(docs), K)
            assert (n_wk >= 0).all() and (n_dk >= 0).all()
            np.testing.assert_array_equal(n_wk.sum(axis=0), n_k)
            np.testing.assert_array_equal(n_dk.sum(axis=0), n_k)
            np.testing.assert_array_equal(n_wk.sum(axis=1), word_counts)
            np.testing.assert_array_equal(n_dk.sum(axis=1), lengths)
            assert int(n_k.sum()) == int(lengths.sum())

        lda_fit(docs, K, sweeps=20, seed=c, V=V, callback=check)
        assert len(sweeps) == 20


# ---------------------------------------------------------------- 6


def _best_linear_bipartition(X):
    """Exact 2-means optimum in 2-D: the optimal split is linearly separable,
    so scanning every line through two points (both sides, with the pair
    assigned every way) covers it."""
    n = len(X)

    def sse(mask):
        if mask.all() or not mask.any():
            return np.inf
        return sum(((X[m] - X[m].mean(axis=0)) ** 2).sum() for m in (mask, ~mask))

    best, best_mask = np.inf, None
    for i, j in itertools.combinations(range(n), 2):
        normal = np.array([X[j, 1] - X[i, 1], X[i, 0] - X[j, 0]])
        side = (X - X[i]) @ normal > 0
        for si, sj in itertools.product((False, True), repeat=2):
            mask = side.copy()
            mask[i], mask[j] = si, sj
            s = sse(mask)
            if s < best - 1e-12:
                best, best_mask = s, mask
    return best_mask


def _two_blobs(seed=300):
    rng = np.random.default_rng(seed)
    X = np.vstack([rng.normal(size=(20, 2)) + 10, rng.normal(size=(20, 2)) - 10])
    return X, np.repeat([0, 1], 20)


def _same_partition(a, b):
    return np.array_equal(a, b) or np.array_equal(a, 1 - b)


@crit(6)
def test_two_blob_kmeans_matches_exhaustive_oracle():
    X, truth = _two_blobs()
    oracle = _best_linear_bipartition(X).astype(int)
    assert _same_partition(oracle, truth)
    for seed in range(5):
        assert _same_partition(kmeans_fit(X, 2, seed=seed).labels, truth)


@crit(6)
def test_two_blob_gmm_responsibilities():
    X, truth = _two_blobs()
    R = gmm_fit(X, 2, seed=0).predict_proba(X)
    comp = int(np.argmax(R[0]))
    true_resp = np.where(truth == 0, R[:, comp], R[:, 1 - comp])
    assert true_resp.min() >= 0.99


@crit(6)
def test_k1_analytic_optima():
    X = np.random.default_rng(301).normal(scale=3, size=(57, 4)) + 2
    np.testing.assert_allclose(kmeans_fit(X, 1, seed=0).centroids[0], X.mean(axis=0), atol=1e-9, rtol=0)
    g = gmm_fit(X, 1, seed=0)
    np.testing.assert_allclose(g.means[0], X.mean(axis=0), atol=1e-9, rtol=0)
    np.testing.assert_allclose(g.variances[0], np.maximum(X.var(axis=0), g.variance_floor), atol=1e-9, rtol=0)
    assert g.weights[0] == pytest.approx(1.0, abs=1e-12)


# ---------------------------------------------------------------- 7


@crit(7)
def test_retrain_is_byte_identical(bundle, synthetic):
    again = train_pipeline(synthetic, AppConfig())
    assert bundle_bytes(again) == bundle_bytes(bundle)


@crit(7)
def test_save_load_predict_bit_identical(bundle, tmp_path):
    path = tmp_path / "model.rrb"
    save_bundle(bundle, path)
    loaded = load_bundle(path)
    tickets = [r.description for r in synthetic_corpus(n=100, n_classes=10, seed=77)]
    assert predict_many(loaded, tickets) == predict_many(bundle, tickets)


# ---------------------------------------------------------------- 8


def _labelled_corpus(n, seed):
    rng = np.random.default_rng(seed)
    weights = rng.dirichlet(np.ones(10))
    # every label gets at least two members so stratification applies
    labels = [f"R{j}" for j in range(10) for _ in range(2)]
    labels += [f"R{j}" for j in rng.choice(10, size=n - len(labels), p=weights)]
    rng.shuffle(labels)
    return Corpus(tuple(TicketRecord(f"T{i:05d}", f"ticket {i}", resolution_id=l) for i, l in enumerate(labels)))


@crit(8)
def test_split_4459():
    s = split(_labelled_corpus(4459, 0), 0.8, 42)
    assert (len(s.train), len(s.test)) == (3567, 892)


@crit(8)
def test_split_partition_and_stratification_over_seeds():
    corpus = _labelled_corpus(4459, 1)
    all_ids = Counter(corpus.ids)
    full = Counter(r.resolution_id for r in corpus)
    for ratio in (0.5, 0.8, 0.9):
        for seed in range(100):
            s = split(corpus, ratio, seed)
            assert len(s.train) == int(np.floor(ratio * 4459))
            assert Counter(s.train.ids) + Counter(s.test.ids) == all_ids
            assert not set(s.train.ids) & set(s.test.ids)
            assert s.stratified
            tr = Counter(r.resolution_id for r in s.train)
            for lbl, n in full.items():
                assert abs(tr[lbl] - ratio * n) < 1.0 + 1e-9
                assert 1 <= tr[lbl] <= n - 1


# ---------------------------------------------------------------- 9


@crit(9)
def test_training_subsample_has_low_drift(bundle, synthetic):
    train_ids = set(bundle.train_ids)
    rng = np.random.default_rng(400)
    pool = [r for r in synthetic if r.incident_id in train_ids]
    window = [pool[i] for i in rng.choice(len(pool), size=200, replace=False)]
    rep = drift_score(bundle, window)
    print(f"\ntraining-subsample JS={rep.js_divergence:.5f}")
    assert rep.js_divergence < 0.02
    assert not rep.retrain_recommended


@crit(9)
def test_disjoint_support_is_ln2():
    assert js_divergence([1.0, 0.0], [0.0, 1.0]) == np.log(2.0)
    assert js_divergence([0.5, 0.5, 0, 0], [0, 0, 0.25, 0.75]) == pytest.approx(np.log(2.0), abs=1e-15)


@crit(9)
def test_flag_fires_iff_above_threshold(bundle, synthetic):
    window = list(synthetic)[:50]
    score = drift_score(bundle, window).js_divergence
    for thr in (0.0, score / 2, score, score * 2, 0.5):
        rep = drift_score(bundle, window, threshold=thr)
        assert isinstance(rep, DriftReport)
        assert rep.js_divergence == score
        assert rep.retrain_recommended == (score > thr)


# ---------------------------------------------------------------- 10


class Client:
    def __init__(self, port):
        self.port = port

    def call(self, method, path, body=None, raw=None):
        conn = http.client.HTTPConnection("127.0.0.1", self.port, timeout=60)
        data = raw if raw is not None else (None if body is None else json.dumps(body).encode())
        headers = {"Content-Type": "application/json"} if data is not None else {}
        conn.request(method, path, body=data, headers=headers)
        resp = conn.getresponse()
        payload = json.loads(resp.read() or b"null")
        conn.close()
        return resp.status, payload


@pytest.fixture(scope="module")
def service(bundle, tmp_path_factory):
    d = tmp_path_factory.mktemp("svc")
    log_path = d / "predictions.jsonl"
    server = make_server(bundle, port=0, log_path=str(log_path))
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    yield Client(server.server_address[1]), server, d
    server.shutdown()
    server.server_close()
    server.state.logger.close()


def _error_ok(status, payload, code):
    assert status == code
    jsonschema.validate(payload, load_schema("error"))
    assert payload["error"]["code"] == code


@crit(10)
def test_health(service, bundle):
    client, *_ = service
    status, body = client.call("GET", "/v1/health")
    assert status == 200
    jsonschema.validate(body, load_schema("health"))
    assert body == {"status": "ok", "bundle_version": bundle.bundle_version}


@crit(10)
def test_predict_training_duplicate(service, bundle, synthetic):
    client, _, d = service
    train_ids = set(bundle.train_ids)
    rec = next(r for r in synthetic if r.incident_id in train_ids)
    status, body = client.call("POST", "/v1/predict", {"description": rec.description})
    assert status == 200
    jsonschema.validate(body, load_schema("prediction_result"))
    assert body["ranked"][0]["resolution_id"] == rec.resolution_id
    assert body["confidence"] >= 0.30 and not body["low_confidence"]
    assert body["bundle_version"] == bundle.bundle_version
    assert body == predict(bundle, TicketRecord("<request>", rec.description)).to_dict()
    time.sleep(0.2)
    lines = (d / "predictions.jsonl").read_text().splitlines()
    assert lines and json.loads(lines[-1])["bundle_version"] == bundle.bundle_version


@crit(10)
def test_predict_validation_errors(service):
    client, *_ = service
    _error_ok(*client.call("POST", "/v1/predict", {"description": ""}), 422)
    _error_ok(*client.call("POST", "/v1/predict", {"description": "   "}), 422)
    _error_ok(*client.call("POST", "/v1/predict", raw=b"{not json"), 400)
    _error_ok(*client.call("POST", "/v1/predict", {"text": "x"}), 400)
    _error_ok(*client.call("POST", "/v1/predict", {"description": "x", "incident_id": 5}), 400)


@crit(10)
def test_similar(service, bundle):
    client, *_ = service
    status, body = client.call("POST", "/v1/similar", {"description": gibberish(), "k": 4})
    assert status == 200
    jsonschema.validate(body, load_schema("neighbors"))
    assert len(body["neighbors"]) == 4 and body["bundle_version"] == bundle.bundle_version
    _error_ok(*client.call("POST", "/v1/similar", {"description": "x", "k": 0}), 400)
    _error_ok(*client.call("POST", "/v1/similar", {"description": ""}), 422)


@crit(10)
def test_metrics(service, bundle):
    client, *_ = service
    status, body = client.call("GET", "/v1/metrics")
    assert status == 200
    jsonschema.validate(body, load_schema("dashboard_feed"))
    assert body["bundle_version"] == bundle.bundle_version
    assert len(body["per_label_accuracy"]) == len(bundle.label_space)


@crit(10)
def test_drift(service, synthetic):
    client, *_ = service
    tickets = [{"description": r.description} for r in list(synthetic)[:30]]
    status, body = client.call("POST", "/v1/drift", {"tickets": tickets})
    assert status == 200
    jsonschema.validate(body, load_schema("drift_report"))
    assert body["window_size"] == 30
    _error_ok(*client.call("POST", "/v1/drift", {"tickets": tickets[:3]}), 422)
    _error_ok(*client.call("POST", "/v1/drift", {"tickets": "nope"}), 400)
    _error_ok(*client.call("POST", "/v1/drift", {"tickets": [{"description": ""}] * 12}), 422)


@crit(10)
def test_routing_errors(service):
    client, *_ = service
    _error_ok(*client.call("GET", "/v1/nothing"), 404)
    _error_ok(*client.call("GET", "/v1/predict"), 405)
    _error_ok(*client.call("POST", "/v1/health", {}), 405)


@crit(10)
def test_reload_failure_keeps_old_bundle(service, bundle, tmp_path):
    client, *_ = service
    bad = tmp_path / "bad.rrb"
    bad.write_bytes(b"RRB\0garbage")
    _error_ok(*client.call("POST", "/v1/reload", {"bundle_path": str(bad)}), 409)
    _error_ok(*client.call("POST", "/v1/reload", {"bundle_path": str(tmp_path / "absent.rrb")}), 409)
    _error_ok(*client.call("POST", "/v1/reload", {}), 400)
    assert client.call("GET", "/v1/health")[1]["bundle_version"] == bundle.bundle_version


@crit(10)
def test_atomic_reload_under_load(service, bundle, synthetic, tmp_path):
    client, server, _ = service
    other = train_pipeline(synthetic_corpus(n=300, n_classes=10, seed=11), fast_config(seed=7))
    paths = {}
    for name, b in (("a", bundle), ("b", other)):
        paths[name] = str(tmp_path / f"{name}.rrb")
        save_bundle(b, paths[name])
    texts = [r.description for r in list(synthetic)[:6]]
    expected = {b.bundle_version: {t: predict(b, TicketRecord("<request>", t)).to_dict() for t in texts} for b in (bundle, other)}
    assert len(expected) == 2

    errors, seen = [], Counter()
    stop = threading.Event()

    def hammer(i):
        while not stop.is_set():
            t = texts[i % len(texts)]
            status, body = client.call("POST", "/v1/predict", {"description": t})
            if status != 200:
                errors.append((status, body))
                continue
            v = body["bundle_version"]
            seen[v] += 1
            if body != expected.get(v, {}).get(t):
                errors.append(("inconsistent", v, t))
            i += 1

    workers = [threading.Thread(target=hammer, args=(i,)) for i in range(4)]
    for w in workers:
        w.start()
    try:
        for step in range(6):
            target = paths["b" if step % 2 == 0 else "a"]
            status, body = client.call("POST", "/v1/reload", {"bundle_path": target})
            assert status == 200, body
            time.sleep(0.3)
    finally:
        stop.set()
        for w in workers:
            w.join()
    assert not errors, errors[:3]
    assert set(seen) == set(expected)
    assert client.call("GET", "/v1/health")[1]["bundle_version"] == bundle.bundle_version
