import csv
import random
from datetime import date, timedelta
from pathlib import Path

import pytest

from adrsig.store import clean, load_dataset

D0 = date(2010, 1, 1)


def day(n: int) -> date:
    return D0 + timedelta(days=n)


def write_dataset(directory, patients, prescriptions, events, exclusions=()):
    """Write record tuples as the four input CSVs.

    patients: (id, year_of_birth, gender, registration_date, death_date or None)
    prescriptions: (id, drug, date); events: (id, code, date); exclusions: (code, reason)
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)

    def dump(name, header, rows):
        with (directory / name).open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            for row in rows:
                w.writerow([v.isoformat() if isinstance(v, date) else ("" if v is None else v) for v in row])

    dump("patients.csv", ["patient_id", "year_of_birth", "gender", "registration_date", "death_date"], patients)
    dump("prescriptions.csv", ["patient_id", "drug_code", "date"], prescriptions)
    dump("events.csv", ["patient_id", "event_code", "date"], events)
    dump("exclusions.csv", ["event_code", "reason"], exclusions)
    return directory


def load_records(directory, patients, prescriptions, events, exclusions=(), cleaned=True):
    d = write_dataset(directory, patients, prescriptions, events, exclusions)
    db = load_dataset(d / "patients.csv", d / "prescriptions.csv", d / "events.csv", d / "exclusions.csv")
    return clean(db) if cleaned else db


def random_micro_dataset(rng: random.Random, span_days: int = 1700):
    """Small dense dataset: <= 20 patients, <= 5 drugs, <= 10 event codes."""
    n_pat = rng.randint(2, 20)
    drugs = [f"D{i}" for i in range(rng.randint(1, 5))]
    codes = [f"C{i:02d}" for i in range(rng.randint(1, 10))]
    patients, rx, ev = [], [], []
    for i in range(n_pat):
        pid = f"p{i:02d}"
        reg = rng.randint(0, 200)
        span = rng.randint(300, span_days)
        death = reg + span if rng.random() < 0.2 else None
        patients.append((pid, 1950 + rng.randint(0, 40), rng.choice(["male", "female"]), day(reg),
                         day(death) if death is not None else None))
        for _ in range(rng.randint(0, 12)):
            rx.append((pid, rng.choice(drugs), day(reg + rng.randint(0, span))))
        for _ in range(rng.randint(0, 60)):
            ev.append((pid, rng.choice(codes), day(reg + rng.randint(0, span))))
    exclusions = [(codes[0], "chronic")] if len(codes) > 3 and rng.random() < 0.5 else []
    return patients, rx, ev, exclusions


@pytest.fixture
def micro(tmp_path):
    def build(seed, **kwargs):
        records = random_micro_dataset(random.Random(seed), **kwargs)
        return records, load_records(tmp_path / f"m{seed}", *records)
    return build


# one line per acceptance criterion, printed after the run
_CRITERIA: dict[int, str] = {}


@pytest.fixture
def criterion():
    def record(number: int, passed: bool, detail: str):
        _CRITERIA[number] = f"criterion {number}: {'PASS' if passed else 'FAIL'} - {detail}"
        print(_CRITERIA[number])
        return passed
    return record


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for number in sorted(_CRITERIA):
            terminalreporter.write_line(_CRITERIA[number])
