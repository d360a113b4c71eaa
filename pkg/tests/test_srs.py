import math
import random

import pytest
from hypothesis import given, strategies as st
from mpmath import mp

from adrsig.errors import UndefinedValueError
from adrsig.ranking import rank_entries
from adrsig.srs import ContingencyTable, SrsReport, contingency, rank_by_ror05, ror, ror_lower90, transform_to_srs
from conftest import day, load_records, random_micro_dataset
from oracles import Raw, contingency as oracle_cells, srs_reports

PAT = [("pat1", 1960, "male", day(0), day(900))]


def two_drug_history_db(tmp_path):
    # A then event 1, then B, then events 2-4; all four within 30 days of A, 2-4 within 30 days of B
    rx = [("pat1", "A", day(400)), ("pat1", "B", day(410))]
    ev = [("pat1", "E1", day(405)), ("pat1", "E2", day(415)), ("pat1", "E3", day(420)), ("pat1", "E4", day(425))]
    return load_records(tmp_path, PAT, rx, ev)


def test_two_drug_history_seven_reports(tmp_path):
    reports = list(transform_to_srs(two_drug_history_db(tmp_path)))
    assert len(reports) == 7
    assert sorted(r.event_code for r in reports if r.drug_code == "A") == ["E1", "E2", "E3", "E4"]
    assert sorted(r.event_code for r in reports if r.drug_code == "B") == ["E2", "E3", "E4"]


def test_no_events_in_window_no_reports(tmp_path):
    db = load_records(tmp_path, PAT, [("pat1", "A", day(400))], [("pat1", "X", day(431)), ("pat1", "Y", day(399))])
    assert len(transform_to_srs(db)) == 0


def test_two_prescriptions_each_pair_with_event(tmp_path):
    rx = [("pat1", "A", day(400)), ("pat1", "A", day(440))]
    ev = [("pat1", "X", day(420)), ("pat1", "X", day(450))]
    db = load_records(tmp_path, PAT, rx, ev)
    assert [tuple(r) for r in transform_to_srs(db)] == [("pat1", "A", "X")] * 2


def test_duplicate_event_collapsed_per_prescription(tmp_path):
    ev = [("pat1", "X", day(400)), ("pat1", "X", day(410)), ("pat1", "X", day(430))]
    db = load_records(tmp_path, PAT, [("pat1", "A", day(400))], ev)
    assert len(transform_to_srs(db)) == 1


def test_contingency_single_report():
    reports = [SrsReport("p", "A", "X")]
    assert contingency(reports, "A", "X") == (1, 0, 0, 0)
    assert contingency(reports, "B", "X") == (0, 0, 1, 0)


def test_contingency_random_reports_match_oracle():
    rng = random.Random(5)
    for _ in range(20):
        reports = [SrsReport("p", rng.choice("AB"), rng.choice("XYZ")) for _ in range(20)]
        tuples = [tuple(r) for r in reports]
        for d in "ABC":
            for e in "XYZW":
                table = contingency(reports, d, e)
                assert tuple(table) == oracle_cells(tuples, d, e)
                assert table.total == 20


def test_report_list_and_cells_match_oracle(tmp_path):
    for seed in range(10):
        records = random_micro_dataset(random.Random(seed))
        db = load_records(tmp_path / str(seed), *records)
        reports = transform_to_srs(db)
        expected = srs_reports(Raw(*records))
        assert sorted(tuple(r) for r in reports) == sorted(expected)
        for d in db.drug_codes:
            for e in db.event_codes:
                assert tuple(contingency(reports, str(d), str(e))) == oracle_cells(expected, d, e)


@pytest.mark.parametrize("cells,expected", [((10, 10, 10, 10), 1.0), ((2, 1, 1, 2), 4.0), ((0, 5, 5, 5), 0.0)])
def test_ror_examples(cells, expected):
    assert ror(ContingencyTable(*cells)) == pytest.approx(expected, abs=1e-15)


def test_ror_lower90_high_precision():
    mp.dps = 50
    assert ror_lower90(ContingencyTable(10, 10, 10, 10)) == pytest.approx(float(mp.exp(-mp.mpf("1.645") * mp.sqrt(mp.mpf("0.4")))), rel=1e-14)
    assert ror_lower90(ContingencyTable(10, 10, 10, 10)) == pytest.approx(0.35327, abs=1e-4)
    want = mp.exp(mp.log(9) - mp.mpf("1.645") * mp.sqrt(mp.mpf(8) / 3))
    assert ror_lower90(ContingencyTable(3, 1, 1, 3)) == pytest.approx(float(want), rel=1e-14)


def test_ror_lower90_approaches_ror_with_scale():
    base = ContingencyTable(6, 3, 2, 5)
    gaps = [ror(base) - ror_lower90(ContingencyTable(*(c * k for c in base))) for k in (1, 10, 100, 1000)]
    assert all(g > 0 for g in gaps)
    assert gaps == sorted(gaps, reverse=True)
    assert gaps[-1] < 0.1 * gaps[0]


def test_ror_undefined_cells():
    with pytest.raises(UndefinedValueError):
        ror_lower90(ContingencyTable(3, 0, 1, 1))
    with pytest.raises(UndefinedValueError):
        ror(ContingencyTable(3, 1, 0, 1))


@given(st.tuples(*[st.integers(1, 500)] * 4))
def test_ror_lower90_increases_with_w00(cells):
    assert ror_lower90(ContingencyTable(cells[0] + 1, *cells[1:])) > ror_lower90(ContingencyTable(*cells))


@given(st.lists(st.tuples(st.sampled_from("AB"), st.sampled_from("XYZ")), max_size=30),
       st.sampled_from("ABC"), st.sampled_from("XYZW"))
def test_cells_partition_reports(pairs, drug, event):
    table = contingency([SrsReport("p", d, e) for d, e in pairs], drug, event)
    assert min(table) >= 0 and table.total == len(pairs)


def test_rank_ties_by_code_and_threshold():
    entries = rank_entries([("B", 1.4), ("A", 1.4), ("C", 0.9)], lambda _, __, s: s > 1)
    assert [(e.event_code, e.rank, e.signalled) for e in entries] == [("A", 1, True), ("B", 2, True), ("C", 3, False)]


def test_rank_by_ror05_matches_oracle(tmp_path):
    for seed in range(10):
        records = random_micro_dataset(random.Random(100 + seed))
        db = load_records(tmp_path / str(seed), *records)
        raw = Raw(*records)
        reports = srs_reports(raw)
        for drug in db.drug_codes:
            ranking = rank_by_ror05(db, str(drug))
            want = {}
            for e in {r[2] for r in reports}:
                cells = oracle_cells(reports, drug, e)
                if cells[0] >= 3 and min(cells) > 0 and e not in raw.excluded:
                    w00, w01, w10, w11 = cells
                    want[e] = math.exp(math.log(w00 * w11 / (w01 * w10)) - 1.645 * math.sqrt(sum(1 / c for c in cells)))
            assert {e.event_code: e.score for e in ranking} == pytest.approx(want, rel=1e-12)
            ordered = sorted(want, key=lambda c: (-want[c], c))
            assert ranking.event_codes == ordered
            assert [e.signalled for e in ranking] == [want[c] > 1 for c in ordered]


def test_event_with_two_reports_not_a_candidate(tmp_path):
    patients = [(f"p{i}", 1960, "male", day(0), day(2000)) for i in range(6)]
    rx = [(f"p{i}", "A" if i < 3 else "B", day(400)) for i in range(6)]
    ev = [("p0", "X", day(401)), ("p1", "X", day(402)), ("p3", "X", day(401))]
    ev += [(f"p{i}", "Y", day(405)) for i in range(6)]
    ev += [("p4", "Z", day(410)), ("p5", "Z", day(410))]
    db = load_records(tmp_path, patients, rx, ev)
    assert contingency(transform_to_srs(db), "A", "X").w00 == 2
    assert "X" not in rank_by_ror05(db, "A").event_codes
