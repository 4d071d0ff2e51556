import time
from dataclasses import replace

import pytest

from resolvrec import AppConfig, save_bundle, train_pipeline
from resolvrec.synthetic import synthetic_corpus

CRITERIA = {
    1: "synthetic end-to-end oracle",
    2: "open-data floor (Bitext)",
    3: "confidence gate",
    4: "gradient suite",
    5: "EM/Gibbs invariants",
    6: "clustering oracle",
    7: "determinism",
    8: "split arithmetic",
    9: "drift",
    10: "service contract",
}

_outcomes: dict[int, list[str]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): test belongs to acceptance criterion n")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    n = marker.args[0]
    if rep.when == "call" or (rep.when == "setup" and not rep.passed):
        _outcomes.setdefault(n, []).append("skipped" if rep.skipped else ("passed" if rep.passed else "failed"))


def pytest_terminal_summary(terminalreporter):
    if not _outcomes:
        return
    terminalreporter.section("acceptance criteria")
    for n, name in CRITERIA.items():
        results = _outcomes.get(n)
        if not results:
            continue
        if "failed" in results:
            status = "FAIL"
        elif all(r == "passed" for r in results):
            status = "PASS"
        else:
            status = "SKIP"
        terminalreporter.write_line(f"[{status}] criterion {n:>2}: {name} ({results.count('passed')}/{len(results)} tests)")


def fast_config(seed: int = 42) -> AppConfig:
    """Small epoch budgets for tests that only need a working bundle."""
    cfg = AppConfig()
    return replace(
        cfg,
        lda=replace(cfg.lda, sweeps=100, infer_sweeps=20),
        siamese=replace(cfg.siamese, epochs=15, fine_tune_epochs=5),
        indexembed=replace(cfg.indexembed, epochs=30, d=16),
        ensemble=replace(cfg.ensemble, epochs=60, folds=3),
        train=replace(cfg.train, seed=seed),
    )


@pytest.fixture(scope="session")
def synthetic():
    return synthetic_corpus(n=1000, n_classes=10, noise=0.2, seed=0)


@pytest.fixture(scope="session")
def trained(synthetic):
    """Default-config bundle on the 1,000-ticket corpus, with its wall time."""
    t0 = time.perf_counter()
    bundle = train_pipeline(synthetic, AppConfig())
    return bundle, time.perf_counter() - t0


@pytest.fixture(scope="session")
def bundle(trained):
    return trained[0]


@pytest.fixture(scope="session")
def small_corpus():
    return synthetic_corpus(n=200, n_classes=4, noise=0.2, seed=3)


@pytest.fixture(scope="session")
def small_bundle(small_corpus):
    return train_pipeline(small_corpus, fast_config())


@pytest.fixture(scope="session")
def small_bundle_path(small_bundle, tmp_path_factory):
    path = tmp_path_factory.mktemp("bundles") / "small.rrb"
    save_bundle(small_bundle, path)
    return str(path)


@pytest.fixture(scope="session")
def small_csv(small_corpus, tmp_path_factory):
    from resolvrec.corpus import write_csv

    path = tmp_path_factory.mktemp("csv") / "tickets.csv"
    write_csv(small_corpus, path)
    return str(path)
