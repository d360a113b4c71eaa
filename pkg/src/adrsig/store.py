"""Longitudinal patient/prescription/event store.

Records are held column-wise in numpy arrays sorted by (patient, day, code),
with dates stored as proleptic Gregorian ordinals (``date.toordinal()``) so
that window arithmetic is plain integer arithmetic.  Codes are interned to
integer ids in ascending string order, which means sorting by id is the same
as sorting by code.
"""
from __future__ import annotations

import bisect
import dataclasses
import logging
import threading
from dataclasses import dataclass, field
from datetime import date
from pathlib import Path
from typing import Iterator, NamedTuple

import numpy as np
import pandas as pd

from .errors import DatasetError

log = logging.getLogger(__name__)

REGISTRATION_CUT_DAYS = 365
ACTIVE_FOLLOWUP_DAYS = 30
ERA_LOOKBACK_DAYS = 395
EVENT_CODE_LENGTH = 5

GENDERS = ("male", "female", "unknown")
EXCLUSION_REASONS = ("chronic", "cancer", "admin")

_GENDER_ALIASES = {"m": "male", "f": "female", "u": "unknown"}
# ordinals fit in 22 bits up to year 9999
_DAY_BITS = 22


class Patient(NamedTuple):
    patient_id: str
    year_of_birth: int
    gender: str
    registration_date: date
    last_active_date: date
    death_date: date | None = None


class PrescriptionRecord(NamedTuple):
    patient_id: str
    drug_code: str
    date: date


class EventRecord(NamedTuple):
    patient_id: str
    event_code: str
    date: date


class PrescriptionEra(NamedTuple):
    patient_id: str
    drug_code: str
    start_date: date
    is_first_in_13_months: bool = True


class Rejection(NamedTuple):
    file: str
    row: int
    reason: str


@dataclass(frozen=True, eq=False)
class EventDatabase:
    """Immutable columnar store.

    Patient-level arrays are indexed by patient position ``0..n_patients-1``.
    ``rx_*`` and ``ev_*`` arrays are sorted by (patient, day, code id).
    """

    patient_ids: np.ndarray
    year_of_birth: np.ndarray
    gender: np.ndarray
    registration_day: np.ndarray
    last_active_day: np.ndarray
    death_day: np.ndarray  # -1 when unknown
    drug_codes: np.ndarray
    event_codes: np.ndarray
    rx_patient: np.ndarray
    rx_day: np.ndarray
    rx_drug: np.ndarray
    ev_patient: np.ndarray
    ev_day: np.ndarray
    ev_code: np.ndarray
    exclusions: dict[str, str] = field(default_factory=dict)
    rejections: tuple[Rejection, ...] = ()
    registration_filtered: bool = False
    active_filtered: bool = False
    _cache: dict = field(default_factory=dict, repr=False)
    _lock: threading.RLock = field(default_factory=threading.RLock, repr=False)

    # ------------------------------------------------------------------ sizes
    @property
    def n_patients(self) -> int:
        return len(self.patient_ids)

    @property
    def n_rejected(self) -> int:
        return len(self.rejections)

    def __len__(self) -> int:
        return len(self.rx_day) + len(self.ev_day)

    # ---------------------------------------------------------- code lookups
    def drug_id(self, drug_code: str) -> int | None:
        return _lookup(self.drug_codes, drug_code)

    def event_id(self, event_code: str) -> int | None:
        return _lookup(self.event_codes, event_code[:EVENT_CODE_LENGTH])

    def patient_index(self, patient_id: str) -> int:
        index = self._patient_lookup().get(patient_id)
        if index is None:
            raise KeyError(f"unknown patient {patient_id!r}")
        return index

    def _patient_lookup(self) -> dict[str, int]:
        return self.cached("patient_lookup", lambda: {p: i for i, p in enumerate(self.patient_ids)})

    @property
    def excluded_mask(self) -> np.ndarray:
        """Boolean mask over ``event_codes`` of chronic/cancer/admin codes."""
        return self.cached(
            "excluded_mask",
            lambda: np.array([c in self.exclusions for c in self.event_codes], dtype=bool),
        )

    @property
    def observation_start_day(self) -> np.ndarray:
        """First day of each patient's usable history."""
        if self.registration_filtered:
            return self.registration_day + REGISTRATION_CUT_DAYS
        return self.registration_day

    # -------------------------------------------------------- record views
    @property
    def patients(self) -> list[Patient]:
        return [self.patient(i) for i in range(self.n_patients)]

    def patient(self, index: int) -> Patient:
        death = int(self.death_day[index])
        return Patient(
            str(self.patient_ids[index]),
            int(self.year_of_birth[index]),
            str(self.gender[index]),
            date.fromordinal(int(self.registration_day[index])),
            date.fromordinal(int(self.last_active_day[index])),
            date.fromordinal(death) if death > 0 else None,
        )

    @property
    def prescriptions(self) -> Iterator[PrescriptionRecord]:
        for p, d, day in zip(self.rx_patient, self.rx_drug, self.rx_day):
            yield PrescriptionRecord(
                str(self.patient_ids[p]), str(self.drug_codes[d]), date.fromordinal(int(day))
            )

    @property
    def events(self) -> Iterator[EventRecord]:
        for p, c, day in zip(self.ev_patient, self.ev_code, self.ev_day):
            yield EventRecord(
                str(self.patient_ids[p]), str(self.event_codes[c]), date.fromordinal(int(day))
            )

    # ------------------------------------------------------------- indexes
    @property
    def ev_key(self) -> np.ndarray:
        return self.cached("ev_key", lambda: _day_key(self.ev_patient, self.ev_day))

    @property
    def rx_key(self) -> np.ndarray:
        return self.cached("rx_key", lambda: _day_key(self.rx_patient, self.rx_day))

    def cached(self, name, build):
        """Memoise a derived structure; safe under concurrent readers."""
        try:
            return self._cache[name]
        except KeyError:
            pass
        with self._lock:
            if name not in self._cache:
                self._cache[name] = build()
            return self._cache[name]

    def window_pairs(self, patients, lo_day, hi_day) -> tuple[np.ndarray, np.ndarray]:
        """Distinct (query, event id) pairs for events inside inclusive day windows.

        ``patients``, ``lo_day`` and ``hi_day`` are aligned arrays, one entry per
        query.  Returns ``(query_index, event_id)`` sorted by query then id.
        """
        patients = np.asarray(patients, dtype=np.int64)
        lo = np.clip(np.asarray(lo_day, dtype=np.int64), 0, (1 << _DAY_BITS) - 1)
        hi = np.clip(np.asarray(hi_day, dtype=np.int64), -1, (1 << _DAY_BITS) - 1)
        start = np.searchsorted(self.ev_key, (patients << _DAY_BITS) + lo, side="left")
        stop = np.searchsorted(self.ev_key, (patients << _DAY_BITS) + np.maximum(hi, 0), side="right")
        stop = np.where(hi < lo, start, np.maximum(stop, start))
        counts = stop - start
        total = int(counts.sum())
        if total == 0:
            empty = np.zeros(0, dtype=np.int64)
            return empty, empty
        query = np.repeat(np.arange(len(patients), dtype=np.int64), counts)
        offsets = np.cumsum(counts) - counts
        pos = np.arange(total, dtype=np.int64) - np.repeat(offsets - start, counts)
        codes = self.ev_code[pos].astype(np.int64)
        n_codes = max(len(self.event_codes), 1)
        pair = np.unique(query * n_codes + codes)
        return pair // n_codes, pair % n_codes

    def patient_events(self, index: int) -> tuple[np.ndarray, np.ndarray]:
        """(days, event ids) of one patient, sorted by day."""
        lo, hi = np.searchsorted(self.ev_patient, [index, index + 1])
        return self.ev_day[lo:hi], self.ev_code[lo:hi]

    def patient_prescriptions(self, index: int) -> tuple[np.ndarray, np.ndarray]:
        lo, hi = np.searchsorted(self.rx_patient, [index, index + 1])
        return self.rx_day[lo:hi], self.rx_drug[lo:hi]


def _lookup(codes: np.ndarray, code: str) -> int | None:
    i = bisect.bisect_left(codes, code)
    if i < len(codes) and codes[i] == code:
        return i
    return None


def _day_key(patient: np.ndarray, day: np.ndarray) -> np.ndarray:
    return (patient.astype(np.int64) << _DAY_BITS) + day.astype(np.int64)


# ---------------------------------------------------------------- loading
def _read_csv(path, required: list[str], label: str) -> pd.DataFrame:
    path = Path(path)
    if not path.is_file():
        raise DatasetError(f"{label} file not found: {path}")
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False, encoding="utf-8")
    except (pd.errors.EmptyDataError, UnicodeDecodeError) as exc:
        raise DatasetError(f"cannot read {label} file {path}: {exc}") from exc
    frame.columns = [c.strip() for c in frame.columns]
    missing = [c for c in required if c not in frame.columns]
    if missing:
        raise DatasetError(f"{label} file {path} is missing columns {missing}")
    return frame


def _parse_days(values: pd.Series) -> np.ndarray:
    """ISO dates to ordinals; unparseable entries become -1."""
    parsed = pd.to_datetime(values.str.strip(), format="%Y-%m-%d", errors="coerce")
    days = np.full(len(values), -1, dtype=np.int64)
    ok = parsed.notna().to_numpy()
    # 719163 == date(1970, 1, 1).toordinal()
    epoch_days = (parsed[ok].to_numpy().astype("datetime64[D]").astype(np.int64))
    days[ok] = epoch_days + 719163
    return days


def _reject(rejections: list[Rejection], label: str, bad: np.ndarray, reason: str) -> None:
    for i in np.flatnonzero(bad):
        # header is line 1
        rejections.append(Rejection(label, int(i) + 2, reason))


def load_dataset(patients_file, prescriptions_file, events_file, exclusions_file=None) -> EventDatabase:
    """Read the four CSV inputs into a raw (unfiltered) store.

    Malformed rows are dropped and recorded in ``EventDatabase.rejections``
    with their 1-based line number.  A missing file raises ``DatasetError``.
    """
    rejections: list[Rejection] = []

    pat = _read_csv(patients_file, ["patient_id", "year_of_birth", "gender", "registration_date"], "patients")
    pid = pat["patient_id"].str.strip().to_numpy(dtype=object)
    yob = pd.to_numeric(pat["year_of_birth"].str.strip(), errors="coerce").to_numpy()
    gender = pat["gender"].str.strip().str.lower().map(lambda g: _GENDER_ALIASES.get(g, g)).to_numpy(dtype=object)
    reg = _parse_days(pat["registration_date"])
    if "death_date" in pat.columns:
        death_raw = pat["death_date"].str.strip()
        death = _parse_days(death_raw)
        bad_death = (death < 0) & (death_raw != "").to_numpy()
    else:
        death = np.full(len(pat), -1, dtype=np.int64)
        bad_death = np.zeros(len(pat), dtype=bool)

    bad_yob = np.isnan(yob) | (np.nan_to_num(yob) != np.round(np.nan_to_num(yob)))
    reg_year = np.array([date.fromordinal(int(d)).year if d > 0 else 0 for d in reg])
    checks = [
        (pid == "", "empty patient_id"),
        (reg < 0, "unparseable registration_date"),
        (bad_death, "unparseable death_date"),
        (bad_yob, "invalid year_of_birth"),
        (~np.isin(gender, GENDERS), "invalid gender"),
    ]
    bad = np.zeros(len(pat), dtype=bool)
    for mask, reason in checks:
        _reject(rejections, "patients", mask & ~bad, reason)
        bad |= mask
    late_birth = ~bad & (np.nan_to_num(yob) > reg_year)
    _reject(rejections, "patients", late_birth, "year_of_birth after registration")
    bad |= late_birth
    dup = ~bad & pd.Series(pid).where(~bad).duplicated(keep="first").to_numpy()
    _reject(rejections, "patients", dup, "duplicate patient_id")
    bad |= dup

    keep = ~bad
    pid, yob, gender, reg, death = pid[keep], yob[keep].astype(np.int64), gender[keep], reg[keep], death[keep]
    index = {p: i for i, p in enumerate(pid)}

    def records(path, code_col, label, truncate):
        frame = _read_csv(path, ["patient_id", code_col, "date"], label)
        p = frame["patient_id"].str.strip().map(index)
        codes = frame[code_col].str.strip()
        if truncate:
            codes = codes.str[:EVENT_CODE_LENGTH]
        days = _parse_days(frame["date"])
        bad = np.zeros(len(frame), dtype=bool)
        for mask, reason in [
            (p.isna().to_numpy(), "unknown patient"),
            ((codes == "").to_numpy(), f"empty {code_col}"),
            (days < 0, "unparseable date"),
        ]:
            _reject(rejections, label, mask & ~bad, reason)
            bad |= mask
        keep = ~bad
        return p[keep].to_numpy(dtype=np.int64), codes[keep].to_numpy(dtype=object), days[keep]

    rx_p, rx_c, rx_d = records(prescriptions_file, "drug_code", "prescriptions", truncate=False)
    ev_p, ev_c, ev_d = records(events_file, "event_code", "events", truncate=True)

    exclusions: dict[str, str] = {}
    if exclusions_file is not None:
        exc = _read_csv(exclusions_file, ["event_code", "reason"], "exclusions")
        for i, (code, reason) in enumerate(zip(exc["event_code"].str.strip(), exc["reason"].str.strip().str.lower())):
            if not code or reason not in EXCLUSION_REASONS:
                rejections.append(Rejection("exclusions", i + 2, "invalid exclusion row"))
                continue
            exclusions.setdefault(code[:EVENT_CODE_LENGTH], reason)

    # last active = latest of any record date or death date
    last = np.maximum(reg, death)
    if len(rx_p):
        np.maximum.at(last, rx_p, rx_d)
    if len(ev_p):
        np.maximum.at(last, ev_p, ev_d)

    drug_codes, rx_ids = np.unique(rx_c.astype(str), return_inverse=True) if len(rx_c) else (np.array([], dtype=str), np.zeros(0, np.int64))
    event_codes, ev_ids = np.unique(ev_c.astype(str), return_inverse=True) if len(ev_c) else (np.array([], dtype=str), np.zeros(0, np.int64))

    db = _build(
        patient_ids=pid.astype(str),
        year_of_birth=yob,
        gender=gender.astype(str),
        registration_day=reg,
        last_active_day=last,
        death_day=death,
        drug_codes=drug_codes.astype(object),
        event_codes=event_codes.astype(object),
        rx=(rx_p, rx_d, rx_ids),
        ev=(ev_p, ev_d, ev_ids),
        exclusions=exclusions,
        rejections=tuple(rejections),
    )
    log.info(
        "loaded %d patients, %d prescriptions, %d events (%d rows rejected)",
        db.n_patients, len(db.rx_day), len(db.ev_day), db.n_rejected,
    )
    return db


def _sorted_records(p, d, c):
    p, d, c = (np.asarray(a, dtype=np.int64) for a in (p, d, c))
    order = np.lexsort((c, d, p))
    return p[order], d[order], c[order].astype(np.int32)


def _build(*, rx, ev, **kwargs) -> EventDatabase:
    rx_p, rx_d, rx_c = _sorted_records(*rx)
    ev_p, ev_d, ev_c = _sorted_records(*ev)
    return EventDatabase(
        rx_patient=rx_p, rx_day=rx_d, rx_drug=rx_c,
        ev_patient=ev_p, ev_day=ev_d, ev_code=ev_c,
        **kwargs,
    )


def load_dataset_dir(directory) -> EventDatabase:
    """Load ``patients.csv``, ``prescriptions.csv``, ``events.csv`` and, if present, ``exclusions.csv``."""
    directory = Path(directory)
    exclusions = directory / "exclusions.csv"
    return load_dataset(
        directory / "patients.csv",
        directory / "prescriptions.csv",
        directory / "events.csv",
        exclusions if exclusions.exists() else None,
    )


def clean(db: EventDatabase) -> EventDatabase:
    return apply_active_period_filter(apply_registration_filter(db))


def load_clean(directory) -> EventDatabase:
    return clean(load_dataset_dir(directory))


# ------------------------------------------------------------ preprocessing
def _with_records(db: EventDatabase, rx_keep=None, ev_keep=None, **flags) -> EventDatabase:
    changes = dict(flags, _cache={}, _lock=threading.RLock())
    if rx_keep is not None:
        changes.update(rx_patient=db.rx_patient[rx_keep], rx_day=db.rx_day[rx_keep], rx_drug=db.rx_drug[rx_keep])
    if ev_keep is not None:
        changes.update(ev_patient=db.ev_patient[ev_keep], ev_day=db.ev_day[ev_keep], ev_code=db.ev_code[ev_keep])
    return dataclasses.replace(db, **changes)


def apply_registration_filter(db: EventDatabase) -> EventDatabase:
    """Drop every record dated before registration + 365 days (day 365 kept)."""
    cut = db.registration_day + REGISTRATION_CUT_DAYS
    return _with_records(
        db,
        rx_keep=db.rx_day >= cut[db.rx_patient],
        ev_keep=db.ev_day >= cut[db.ev_patient],
        registration_filtered=True,
    )


def apply_active_period_filter(db: EventDatabase) -> EventDatabase:
    """Drop prescriptions whose patient is active for fewer than 30 days afterwards."""
    follow = db.last_active_day[db.rx_patient] - db.rx_day
    return _with_records(db, rx_keep=follow >= ACTIVE_FOLLOWUP_DAYS, active_filtered=True)


# ------------------------------------------------------------------ queries
def all_eras(db: EventDatabase) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """First-in-13-months prescriptions of every drug as (patient, drug id, day).

    Same-day duplicates of a drug collapse to one prescription.  Sorted by
    (patient, day, drug).
    """

    def build():
        key = np.unique((db.rx_patient.astype(np.int64) * max(len(db.drug_codes), 1) + db.rx_drug) << _DAY_BITS | db.rx_day)
        group = key >> _DAY_BITS
        day = key & ((1 << _DAY_BITS) - 1)
        first = np.ones(len(key), dtype=bool)
        same = group[1:] == group[:-1]
        first[1:] = ~same | (day[1:] - day[:-1] >= ERA_LOOKBACK_DAYS)
        n_drugs = max(len(db.drug_codes), 1)
        patient, drug, day = group[first] // n_drugs, group[first] % n_drugs, day[first]
        order = np.lexsort((drug, day, patient))
        return patient[order], drug[order], day[order]

    return db.cached("eras", build)


def find_eras(db: EventDatabase, drug_code: str) -> list[PrescriptionEra]:
    drug = db.drug_id(drug_code)
    if drug is None:
        return []
    patient, drugs, day = all_eras(db)
    mask = drugs == drug
    out = [
        PrescriptionEra(str(db.patient_ids[p]), drug_code, date.fromordinal(int(d)), True)
        for p, d in zip(patient[mask], day[mask])
    ]
    out.sort(key=lambda e: (e.patient_id, e.start_date))
    return out


def events_in_window(db: EventDatabase, patient_id: str, anchor_date: date,
                     offset_start_days: int, offset_end_days: int) -> set[str]:
    """Distinct event codes dated within [anchor + start, anchor + end]."""
    if offset_start_days > offset_end_days:
        raise ValueError(f"window start {offset_start_days} is after end {offset_end_days}")
    index = db.patient_index(patient_id)
    days, codes = db.patient_events(index)
    anchor = anchor_date.toordinal()
    lo = np.searchsorted(days, anchor + offset_start_days, side="left")
    hi = np.searchsorted(days, anchor + offset_end_days, side="right")
    return {str(db.event_codes[c]) for c in codes[lo:hi]}
