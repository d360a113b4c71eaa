import filecmp
import math
from dataclasses import replace

import numpy as np
import pandas as pd
import pytest
from hypothesis import given, settings, strategies as st

from adrsig.errors import ConfigError
from adrsig.store import load_clean
from adrsig.synthgen import (
    DrugSpec, GeneratorConfig, PlantedAdr, _merge_intervals, bernoulli_days, describe, generate, parse_config,
    synthesize,
)
from conftest import day, load_records

SMALL = GeneratorConfig(n_patients=300, n_event_codes=10, n_background_drugs=2)


def _lean(n_patients, drug, adr, seed=0):
    """Only the drug and the planted event; nothing else is generated."""
    return GeneratorConfig(
        rng_seed=seed, n_patients=n_patients, n_event_codes=0, n_background_drugs=0, n_chronic_codes=0,
        n_cancer_codes=0, n_admin_codes=0, death_probability=0.0, drugs=(drug,), adrs=(adr,),
    )


def _window_incidence(data, drug, event, lo, hi):
    rx = data.prescriptions[data.prescriptions.drug_code == drug]
    ev = data.events[data.events.event_code == event]
    rx_day = pd.to_datetime(rx.date).map(pd.Timestamp.toordinal).to_numpy()
    hits = {}
    for pid, d in zip(ev.patient_id, pd.to_datetime(ev.date).map(pd.Timestamp.toordinal)):
        hits.setdefault(pid, []).append(d)
    found = [any(s + lo <= d <= s + hi for d in hits.get(pid, ())) for pid, s in zip(rx.patient_id, rx_day)]
    return float(np.mean(found)), len(found)


# ------------------------------------------------------------------ config
def test_parse_config_round_trip():
    cfg = parse_config("""
        seed = 7
        n_patients = 500
        drug = DRUG01 exposure=0.2 indication=IND01 indication_rate=0.3 indication_followup=1.0 indication_followup_new=0.15
        drug = DRUG02 exposure=0.05
        adr = DRUG01 ADR01 rr=10 rate=0.001
        adr = DRUG02 ADR02 rr=4 rate=0.0001 onset=5-20  # comment
    """)
    assert cfg.rng_seed == 7 and cfg.n_patients == 500
    assert cfg.drugs[0] == DrugSpec("DRUG01", 0.2, ("IND01",), 0.3, 1.0, 0.15)
    assert cfg.adrs[1] == PlantedAdr("DRUG02", "ADR02", 4.0, 0.0001, (5, 20))


@pytest.mark.parametrize("text", [
    "n_patients = 0",
    "bogus = 1",
    "drug = D exposure=1.5",
    "drug = D\nadr = X E rr=2",
    "drug = D\nadr = D E rr=0.5",
    "drug = D\nadr = D E onset=1-40",
    "drug = D colour=red",
])
def test_invalid_config(text):
    with pytest.raises(ConfigError):
        parse_config(text)


def test_frequency_classes():
    assert PlantedAdr("D", "E", 10, 0.001).frequency_class == "common"
    assert PlantedAdr("D", "E", 2, 1e-4).frequency_class == "less_common"
    assert PlantedAdr("D", "E", 1.5, 1e-5).frequency_class == "rare"


# ---------------------------------------------------------------- sampling
def test_bernoulli_days_bounds_and_mean():
    rng = np.random.default_rng(0)
    lo = np.arange(2000) * 10
    hi = lo + 99
    i, d = bernoulli_days(rng, lo, hi, 0.02)
    assert np.all(d >= lo[i]) and np.all(d <= hi[i])
    assert len(set(zip(i.tolist(), d.tolist()))) == len(i)
    n = 2000 * 100
    assert abs(len(i) - n * 0.02) < 4 * math.sqrt(n * 0.02 * 0.98)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 3), st.integers(0, 60), st.integers(-5, 30)), max_size=25))
def test_merge_intervals_match_set_union(rows):
    owner = np.array([r[0] for r in rows], dtype=np.int64)
    lo = np.array([r[1] for r in rows], dtype=np.int64)
    hi = lo + np.array([r[2] for r in rows], dtype=np.int64)
    o, a, b = _merge_intervals(owner, lo, hi)
    want = {(w, x) for w, l, h in zip(owner, lo, hi) for x in range(l, h + 1)}
    got = [(w, x) for w, l, h in zip(o, a, b) for x in range(l, h + 1)]
    assert set(got) == want and len(got) == len(want)


# -------------------------------------------------------------- generation
def test_generation_is_byte_identical(tmp_path):
    a = generate(replace(SMALL, rng_seed=3), tmp_path / "a")
    b = generate(replace(SMALL, rng_seed=3), tmp_path / "b")
    names = ["patients.csv", "prescriptions.csv", "events.csv", "exclusions.csv", "ground_truth.csv"]
    match, mismatch, errors = filecmp.cmpfiles(a, b, names, shallow=False)
    assert match == names
    c = generate(replace(SMALL, rng_seed=4), tmp_path / "c")
    assert not filecmp.cmp(a / "events.csv", c / "events.csv", shallow=False)


def test_output_loads_cleanly(tmp_path):
    out = generate(SMALL, tmp_path)
    db = load_clean(out)
    assert db.n_rejected == 0
    assert db.n_patients == 300
    assert set(db.exclusions.values()) == {"chronic", "cancer", "admin"}


def test_ground_truth_lists_every_planted_pair():
    cfg = replace(SMALL, drugs=(DrugSpec("DRUG01", 0.1), DrugSpec("DRUG02", 0.1)),
                  adrs=(PlantedAdr("DRUG01", "ADR01"), PlantedAdr("DRUG02", "ADR02", 3, 1e-4)))
    truth = synthesize(cfg).ground_truth
    assert sorted(zip(truth.drug_code, truth.event_code, truth.frequency)) == sorted(
        (a.drug_code, a.event_code, a.frequency_class) for a in cfg.adrs)


def test_null_relative_risk_keeps_background_rate():
    bg = 0.001
    data = synthesize(_lean(100_000, DrugSpec("D", 1.0, repeat_probability=0.0), PlantedAdr("D", "ADR", 1.0, bg), seed=1))
    rate, n = _window_incidence(data, "D", "ADR", 1, 30)
    assert n >= 99_000
    p = 1 - (1 - bg) ** 30
    assert abs(rate - p) <= 3 * math.sqrt(p * (1 - p) / n)


def test_relative_risk_ten_incidence():
    # daily rate giving a 1% background 30-day incidence
    bg = 1 - 0.99 ** (1 / 30)
    data = synthesize(_lean(20_000, DrugSpec("D", 1.0, repeat_probability=0.0), PlantedAdr("D", "ADR", 10.0, bg), seed=2))
    rate, n = _window_incidence(data, "D", "ADR", 1, 30)
    p = 1 - (1 - 10 * bg) ** 30
    assert 0.09 < p < 0.10
    assert abs(rate - p) <= 3 * math.sqrt(p * (1 - p) / n)


def test_indication_precedes_prescription(tmp_path):
    cfg = GeneratorConfig(rng_seed=5, n_patients=3000)
    db = load_clean(generate(cfg, tmp_path))
    drug, ind = db.drug_id("DRUG01"), db.event_id("IND01")
    mask = db.rx_drug == drug
    users, idx = np.unique(db.rx_patient[mask], return_index=True)
    first = db.rx_day[mask][idx]
    q, c = db.window_pairs(users, first - 60, first - 1)
    with_ind = np.unique(q[c == ind])
    assert len(users) > 100
    assert len(with_ind) / len(users) >= 0.5


# ---------------------------------------------------------------- describe
def _ten_patients(tmp_path, genders):
    patients = [(f"p{i}", 1950 + i, g, day(0), day(3000)) for i, g in enumerate(genders)]
    rx = [(f"p{i}", "A", day(400)) for i in range(6)] + [("p0", "A", day(500)), ("p1", "A", day(1200))]
    rx += [("p7", "B", day(400))]
    return load_records(tmp_path, patients, rx, [])


def test_describe_hand_tally(tmp_path):
    genders = ["male", "female"] * 5
    db = _ten_patients(tmp_path, genders)
    summary = describe(db, ["A", "B", "C"])
    # eras of A: p0..p5 at day 400 plus p1 again at day 1200 (800 days later)
    years_a = [day(400).year - (1950 + i) for i in range(6)] + [day(1200).year - 1951]
    assert summary["A"]["total"] == 7
    assert summary["A"]["mean_age"] == pytest.approx(sum(years_a) / 7)
    assert summary["A"]["male_proportion"] == pytest.approx(3 / 7)
    assert summary["B"] == {"total": 1, "mean_age": day(400).year - 1957, "male_proportion": 0.0}
    assert summary["C"]["total"] == 0


def test_describe_all_male(tmp_path):
    db = _ten_patients(tmp_path, ["male"] * 10)
    assert describe(db, ["A"])["A"]["male_proportion"] == 1.0


def test_consultation_codes_recorded_on_prescription_day():
    drug = DrugSpec("D", 1.0, repeat_probability=0.0, consult_codes=("CON",), consult_rate=0.3)
    cfg = replace(_lean(5000, drug, PlantedAdr("D", "ADR", 1.0, 1e-6)), indication_background_rate=0.0)
    data = synthesize(cfg)
    rx = dict(zip(data.prescriptions.patient_id, data.prescriptions.date))
    con = data.events[data.events.event_code == "CON"]
    assert all(rx[p] == d for p, d in zip(con.patient_id, con.date))
    n = len(rx)
    assert abs(len(con) - 0.3 * n) <= 3 * math.sqrt(n * 0.3 * 0.7)
    assert parse_config("drug = D consult=C1,C2 consult_rate=0.2").drugs[0].consult_codes == ("C1", "C2")
