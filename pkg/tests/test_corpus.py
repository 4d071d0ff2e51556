import io
from collections import Counter
from datetime import datetime

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from resolvrec.corpus import (
    CleanPolicy,
    Corpus,
    CsvFormatConfig,
    TicketRecord,
    clean,
    load_csv,
    split,
    window,
    write_csv,
)
from resolvrec.errors import DuplicateKeyError, EmptyAfterCleanError, EmptyInputError, SchemaError, TooSmallError

HEADER = "Incident Number,Description,Submit Date,Resolution,Resolution ID\n"


def test_sample_row_from_problem_statement():
    row = "INC001, Network not available in my area, 01-07-2024 1:16 AM, Network connectivity is now working fine, RES001\n"
    c = load_csv((HEADER + row).encode())
    (rec,) = c.records
    assert rec.incident_id == "INC001"
    assert rec.description == "Network not available in my area"
    assert rec.submit_date == datetime(2024, 7, 1, 1, 16)
    assert rec.resolution_text == "Network connectivity is now working fine"
    assert rec.resolution_id == "RES001"
    assert rec.resolved_date is None


def test_header_only_is_empty_input():
    with pytest.raises(EmptyInputError):
        load_csv(HEADER.encode())


def test_blank_optional_cells_become_absent():
    c = load_csv((HEADER + "INC9,Printer jammed,not a date,,\n").encode())
    rec = c[0]
    assert rec.resolution_text is None and rec.resolution_id is None and rec.submit_date is None


def test_missing_mandatory_column_is_named():
    with pytest.raises(SchemaError, match="Description"):
        load_csv(b"Incident Number,Resolution\nINC1,x\n")


def test_duplicate_id_cites_both_rows():
    data = HEADER + "INC1,a,,,\nINC2,b,,,\nINC1,c,,,\n"
    with pytest.raises(DuplicateKeyError, match=r"rows 2 and 4"):
        load_csv(data.encode())


def test_column_mapping_and_date_format():
    fmt = CsvFormatConfig(columns={"incident_id": "id", "description": "text", "submit_date": "opened"},
                          date_format="%Y-%m-%d")
    c = load_csv(b"id,text,opened\nA,hello there,2024-02-03\n", fmt)
    assert c[0].submit_date == datetime(2024, 2, 3)


def test_rfc4180_quoting_survives():
    data = HEADER + 'INC1,"Line one, with comma\nand ""quotes""",,,\n'
    assert load_csv(data.encode())[0].description == 'Line one, with comma\nand "quotes"'


def test_csv_round_trip_keeps_every_field(small_corpus):
    buf = io.StringIO()
    write_csv(small_corpus, buf)
    again = load_csv(buf.getvalue().encode())
    assert again.records == small_corpus.records


def test_clean_drops_empty_descriptions():
    c = Corpus((TicketRecord("a", "x"), TicketRecord("b", "  "), TicketRecord("c", "y")))
    out, report = clean(c)
    assert out.ids == ["a", "c"]
    assert dict(report.dropped) == {"empty_description": 1}


def test_clean_no_nulls_is_noop(small_corpus):
    out, report = clean(small_corpus)
    assert out == small_corpus and not report.dropped


def test_clean_require_resolution_and_idempotence():
    c = Corpus((TicketRecord("a", "x", resolution_text="fix"), TicketRecord("b", "y"), TicketRecord("c", "")))
    once, report = clean(c, CleanPolicy(require_resolution=True))
    assert once.ids == ["a"]
    assert dict(report.dropped) == {"empty_description": 1, "missing_resolution": 1}
    assert clean(once, CleanPolicy(require_resolution=True))[0] == once


def test_clean_everything_dropped():
    with pytest.raises(EmptyAfterCleanError):
        clean(Corpus((TicketRecord("a", ""),)))


def test_duplicate_in_corpus_rejected():
    with pytest.raises(DuplicateKeyError):
        Corpus((TicketRecord("a", "x"), TicketRecord("a", "y")))


def test_resolved_before_submit_rejected():
    with pytest.raises(ValueError):
        TicketRecord("a", "x", submit_date=datetime(2024, 1, 2), resolved_date=datetime(2024, 1, 1))


def _corpus(n, labels=None):
    return Corpus(tuple(TicketRecord(f"T{i}", f"text {i}", resolution_id=None if labels is None else labels[i])
                        for i in range(n)))


def test_split_sizes_small():
    s = split(_corpus(10), 0.8, seed=1)
    assert (len(s.train), len(s.test)) == (8, 2)


def test_split_too_small():
    with pytest.raises(TooSmallError):
        split(_corpus(1), 0.8, 0)


def test_split_is_deterministic(small_corpus):
    a, b = split(small_corpus, 0.8, 7), split(small_corpus, 0.8, 7)
    assert a.train.ids == b.train.ids and a.test.ids == b.test.ids


def test_split_stratifies_when_possible(small_corpus):
    s = split(small_corpus, 0.8, 5)
    assert s.stratified
    full = Counter(r.resolution_id for r in small_corpus)
    test = Counter(r.resolution_id for r in s.test)
    for lbl, n in full.items():
        assert abs(test[lbl] - 0.2 * n) <= 1


def test_split_falls_back_with_singleton_label():
    c = _corpus(6, ["A", "A", "A", "B", "B", "C"])
    assert not split(c, 0.5, 0).stratified


def test_time_split_trains_on_oldest():
    recs = tuple(TicketRecord(f"T{i}", "x", submit_date=datetime(2024, 1, 10 - i)) for i in range(5))
    s = split(Corpus(recs), 0.6, 0, mode="time")
    assert {r.submit_date.day for r in s.train} == {6, 7, 8}


def test_window_keeps_recent():
    recs = tuple(TicketRecord(f"T{i}", "x", submit_date=datetime(2024, 1, 1 + i)) for i in range(10))
    assert window(Corpus(recs), 2).ids == ["T7", "T8", "T9"]


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 60), st.sampled_from([0.5, 0.8, 0.9]), st.integers(0, 2**31))
def test_split_partition_property(n, ratio, seed):
    c = _corpus(n, [f"L{i % 3}" for i in range(n)])
    s = split(c, ratio, seed)
    tr, te = set(s.train.ids), set(s.test.ids)
    assert not tr & te and tr | te == set(c.ids)
    assert len(s.train) == int(ratio * n)
