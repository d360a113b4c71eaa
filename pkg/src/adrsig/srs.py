"""SRS-style report transform and reporting-odds-ratio ranking."""
from __future__ import annotations

import math
from typing import Iterator, NamedTuple

import numpy as np

from .errors import UndefinedValueError
from .ranking import RankedSignalList, rank_entries
from .store import EventDatabase

PAIRING_WINDOW_DAYS = 30
MIN_REPORTS = 3
Z_90 = 1.645


class SrsReport(NamedTuple):
    patient_id: str
    drug_code: str
    event_code: str


class ContingencyTable(NamedTuple):
    """Report counts: w00 drug & event, w01 drug & other event,
    w10 other drug & event, w11 neither."""

    w00: int
    w01: int
    w10: int
    w11: int

    @property
    def total(self) -> int:
        return self.w00 + self.w01 + self.w10 + self.w11


class SrsReports:
    """Column-wise report list: one row per (prescription, distinct event)."""

    def __init__(self, db: EventDatabase, prescription, patient, drug, event):
        self.db = db
        self.prescription = prescription
        self.patient = patient
        self.drug = drug
        self.event = event

    def __len__(self) -> int:
        return len(self.event)

    def __iter__(self) -> Iterator[SrsReport]:
        ids, drugs, events = self.db.patient_ids, self.db.drug_codes, self.db.event_codes
        for p, d, e in zip(self.patient, self.drug, self.event):
            yield SrsReport(str(ids[p]), str(drugs[d]), str(events[e]))

    def drug_totals(self) -> np.ndarray:
        return np.bincount(self.drug, minlength=len(self.db.drug_codes))

    def event_totals(self) -> np.ndarray:
        return np.bincount(self.event, minlength=len(self.db.event_codes))

    def drug_event_counts(self, drug: int) -> np.ndarray:
        return np.bincount(self.event[self.drug == drug], minlength=len(self.db.event_codes))


def transform_to_srs(db: EventDatabase) -> SrsReports:
    """Pair every prescription with each distinct event in days [0, 30] after it."""

    def build():
        query, event = db.window_pairs(db.rx_patient, db.rx_day, db.rx_day + PAIRING_WINDOW_DAYS)
        return SrsReports(db, query, db.rx_patient[query], db.rx_drug[query].astype(np.int64), event)

    return db.cached("srs_reports", build)


def contingency(reports, drug_code: str, event_code: str) -> ContingencyTable:
    """Classify every report against one (drug, event) pair.

    ``reports`` may be an ``SrsReports`` or any iterable of ``SrsReport``.
    """
    if isinstance(reports, SrsReports):
        db = reports.db
        d, e = db.drug_id(drug_code), db.event_id(event_code)
        is_drug = reports.drug == d if d is not None else np.zeros(len(reports), dtype=bool)
        is_event = reports.event == e if e is not None else np.zeros(len(reports), dtype=bool)
        w00 = int(np.count_nonzero(is_drug & is_event))
        n_drug, n_event = int(is_drug.sum()), int(is_event.sum())
        return ContingencyTable(w00, n_drug - w00, n_event - w00, len(reports) - n_drug - n_event + w00)
    cells = [0, 0, 0, 0]
    for r in reports:
        cells[(r.drug_code != drug_code) * 2 + (r.event_code != event_code)] += 1
    return ContingencyTable(*cells)


def ror(table: ContingencyTable) -> float:
    w00, w01, w10, w11 = table
    if w10 == 0 or w01 == 0 or w11 == 0:
        raise UndefinedValueError(f"ROR undefined for {tuple(table)}")
    return (w00 / w10) / (w01 / w11)


def ror_lower90(table: ContingencyTable) -> float:
    """Lower bound of the 90% confidence interval of the ROR."""
    if min(table) <= 0:
        raise UndefinedValueError(f"ROR05 undefined for {tuple(table)}")
    w00, w01, w10, w11 = table
    se = math.sqrt(1 / w00 + 1 / w01 + 1 / w10 + 1 / w11)
    return math.exp(math.log(ror(table)) - Z_90 * se)


def rank_by_ror05(db: EventDatabase, drug_code: str) -> RankedSignalList:
    """Rank non-excluded events with at least three drug reports by ROR05.

    Events with a zero cell are left unscored.  Signalled when ROR05 > 1.
    """
    result = RankedSignalList(drug_code, "ROR05")
    drug = db.drug_id(drug_code)
    if drug is None:
        return result
    reports = transform_to_srs(db)
    w00 = reports.drug_event_counts(drug)
    n_drug = int(reports.drug_totals()[drug])
    if n_drug == 0:
        return result
    n_event = reports.event_totals()
    total = len(reports)
    excluded = db.excluded_mask

    scored, tables = [], {}
    for e in np.flatnonzero((w00 >= MIN_REPORTS) & ~excluded):
        a = int(w00[e])
        table = ContingencyTable(a, n_drug - a, int(n_event[e]) - a, total - n_drug - int(n_event[e]) + a)
        if min(table) <= 0:
            continue
        code = str(db.event_codes[e])
        scored.append((code, ror_lower90(table)))
        tables[code] = table
    result.entries = rank_entries(scored, lambda _, __, score: score > 1)
    result.details["tables"] = tables
    return result
