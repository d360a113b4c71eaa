"""MUTARA and HUNT: leverage-based case/non-user ranking.

Each user of a drug contributes one hazard subsequence starting at their
first prescription, and one reference period just before it.  Each non-user
contributes one randomly placed window of ``t_c`` days.  Events seen in a
user's reference period are treated as predictable and removed before the
unexpected-leverage is computed.
"""
from __future__ import annotations

import zlib
from dataclasses import dataclass
from datetime import date
from typing import NamedTuple

import numpy as np

from .errors import ConfigError, UndefinedValueError
from .ranking import RankedSignalList, rank_entries, top_fraction
from .store import EventDatabase

CANDIDATE_WINDOW_DAYS = 30
HUNT_SIGNAL_FRACTION = 0.10


@dataclass(frozen=True)
class MutaraParams:
    t_e: int = 30
    t_c: int = 30
    t_r: int = 60
    t_b: int = 60
    rng_seed: int = 0

    def __post_init__(self):
        for name in ("t_e", "t_c", "t_r", "t_b"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")


def preset(reference_days: int, rng_seed: int = 0) -> MutaraParams:
    """T_c = T_e = 30 with the reference period abutting the prescription."""
    return MutaraParams(30, 30, reference_days, reference_days, rng_seed)


PRESETS = {"MUTARA60": 60, "MUTARA180": 180, "HUNT60": 60, "HUNT180": 180}


class UserSubsequence(NamedTuple):
    patient_id: str
    first_prescription_date: date
    t_h: int
    hazard_events: frozenset
    reference_events: frozenset


class NonUserWindow(NamedTuple):
    patient_id: str
    start_date: date
    end_date: date
    events: frozenset


class SupportCounts(NamedTuple):
    tot: int
    n_users: int
    n_ac: int  # users with the event in the hazard window
    n_c: int  # n_ac plus non-users with the event
    n_ahatc: int  # users with the event in hazard but not reference window
    n_hatc: int  # n_ahatc plus non-users with the event

    @property
    def supp_AC(self) -> float:
        return self.n_ac / self.tot

    @property
    def supp_A(self) -> float:
        return self.n_users / self.tot

    @property
    def supp_C(self) -> float:
        return self.n_c / self.tot

    @property
    def supp_AhatC(self) -> float:
        return self.n_ahatc / self.tot

    @property
    def supp_hatC(self) -> float:
        return self.n_hatc / self.tot


class LeverageScores(NamedTuple):
    event_code: str
    leverage: float
    unexlev: float
    leverage_rank: int
    unexlev_rank: int
    rank_ratio: float


# ----------------------------------------------------------- window geometry
def _user_geometry(db: EventDatabase, drug: int, params: MutaraParams):
    """Per-user (patient, first day, T_h) arrays in patient order."""
    mask = db.rx_drug == drug
    patient, day = db.rx_patient[mask], db.rx_day[mask]
    if len(patient) == 0:
        empty = np.zeros(0, dtype=np.int64)
        return empty, empty, empty
    new = np.r_[True, patient[1:] != patient[:-1]]
    group = np.cumsum(new) - 1
    users, first = patient[new], day[new]
    later = np.flatnonzero(day > first[group])
    second = np.full(len(users), -1, dtype=np.int64)
    g, idx = np.unique(group[later], return_index=True)
    second[g] = day[later[idx]]
    s = second - first
    t_h = np.where((second >= 0) & (s <= params.t_e), s + params.t_e, params.t_e)
    return users, first, t_h


def _nonuser_windows(db: EventDatabase, drug: int | None, drug_code: str, params: MutaraParams):
    """Per-non-user (patient, window start day, window end day)."""
    is_user = np.zeros(db.n_patients, dtype=bool)
    if drug is not None:
        is_user[db.rx_patient[db.rx_drug == drug]] = True
    span_lo = db.observation_start_day
    span_hi = db.last_active_day
    candidates = np.flatnonzero(~is_user & (span_hi >= span_lo))
    lo, hi = span_lo[candidates], span_hi[candidates]
    length = hi - lo + 1
    slack = np.maximum(length - params.t_c, 0)
    rng = np.random.default_rng([params.rng_seed, zlib.crc32(drug_code.encode())])
    start = lo + rng.integers(0, slack + 1)
    end = np.minimum(start + params.t_c - 1, hi)
    return candidates, start, end


# --------------------------------------------------------------- list API
def _codes(db, ids) -> frozenset:
    return frozenset(str(db.event_codes[i]) for i in ids)


def _grouped(db, n, query, codes) -> list[frozenset]:
    out = [[] for _ in range(n)]
    for q, c in zip(query, codes):
        out[q].append(c)
    return [_codes(db, c) for c in out]


def build_users(db: EventDatabase, drug_code: str, params: MutaraParams) -> list[UserSubsequence]:
    drug = db.drug_id(drug_code)
    if drug is None:
        return []
    users, first, t_h = _user_geometry(db, drug, params)
    hazard = _grouped(db, len(users), *db.window_pairs(users, first, first + t_h))
    ref_lo = first - params.t_b
    reference = _grouped(db, len(users), *db.window_pairs(users, ref_lo, ref_lo + params.t_r - 1))
    return [
        UserSubsequence(str(db.patient_ids[p]), date.fromordinal(int(f)), int(t), h, r)
        for p, f, t, h, r in zip(users, first, t_h, hazard, reference)
    ]


def sample_nonusers(db: EventDatabase, drug_code: str, params: MutaraParams) -> list[NonUserWindow]:
    patients, start, end = _nonuser_windows(db, db.drug_id(drug_code), drug_code, params)
    events = _grouped(db, len(patients), *db.window_pairs(patients, start, end))
    return [
        NonUserWindow(str(db.patient_ids[p]), date.fromordinal(int(s)), date.fromordinal(int(e)), ev)
        for p, s, e, ev in zip(patients, start, end, events)
    ]


def supports(users, nonusers, event_code: str) -> SupportCounts:
    tot = len(users) + len(nonusers)
    if tot == 0:
        raise UndefinedValueError("no users or non-users: supports undefined")
    n_ac = sum(event_code in u.hazard_events for u in users)
    n_ahatc = sum(event_code in u.hazard_events and event_code not in u.reference_events for u in users)
    n_nc = sum(event_code in w.events for w in nonusers)
    return SupportCounts(tot, len(users), n_ac, n_ac + n_nc, n_ahatc, n_ahatc + n_nc)


def leverage(counts: SupportCounts) -> float:
    """supp(A->C) - supp(A->) * supp(->C)."""
    return (counts.n_ac * counts.tot - counts.n_users * counts.n_c) / counts.tot**2


def unexpected_leverage(counts: SupportCounts) -> float:
    return (counts.n_ahatc * counts.tot - counts.n_users * counts.n_hatc) / counts.tot**2


# ------------------------------------------------------- vectorised counts
@dataclass(frozen=True)
class CohortCounts:
    """Integer support counts for every event code at once."""

    n_users: int
    n_nonusers: int
    n_ac: np.ndarray
    n_ahatc: np.ndarray
    n_nc: np.ndarray
    candidate: np.ndarray

    @property
    def tot(self) -> int:
        return self.n_users + self.n_nonusers

    def support(self, e: int) -> SupportCounts:
        ac, ahatc, nc = int(self.n_ac[e]), int(self.n_ahatc[e]), int(self.n_nc[e])
        return SupportCounts(self.tot, self.n_users, ac, ac + nc, ahatc, ahatc + nc)

    def leverage_numerators(self) -> tuple[np.ndarray, np.ndarray]:
        """``tot**2`` times leverage and unexpected-leverage, as exact integers."""
        tot, a = self.tot, self.n_users
        lev = self.n_ac * tot - a * (self.n_ac + self.n_nc)
        unex = self.n_ahatc * tot - a * (self.n_ahatc + self.n_nc)
        return lev, unex


def cohort_counts(db: EventDatabase, drug_code: str, params: MutaraParams) -> CohortCounts:
    return db.cached(("cohort", drug_code, params), lambda: _cohort_counts(db, drug_code, params))


def _cohort_counts(db: EventDatabase, drug_code: str, params: MutaraParams) -> CohortCounts:
    n_codes = len(db.event_codes)
    drug = db.drug_id(drug_code)
    zeros = np.zeros(n_codes, dtype=np.int64)
    if drug is None:
        return CohortCounts(0, 0, zeros, zeros, zeros, zeros.astype(bool))
    users, first, t_h = _user_geometry(db, drug, params)
    hq, hc = db.window_pairs(users, first, first + t_h)
    ref_lo = first - params.t_b
    rq, rc = db.window_pairs(users, ref_lo, ref_lo + params.t_r - 1)
    predictable = np.isin(hq * n_codes + hc, rq * n_codes + rc)
    _, cc = db.window_pairs(users, first, first + CANDIDATE_WINDOW_DAYS)
    nonusers, start, end = _nonuser_windows(db, drug, drug_code, params)
    _, nc = db.window_pairs(nonusers, start, end)
    return CohortCounts(
        n_users=len(users),
        n_nonusers=len(nonusers),
        n_ac=np.bincount(hc, minlength=n_codes),
        n_ahatc=np.bincount(hc[~predictable], minlength=n_codes),
        n_nc=np.bincount(nc, minlength=n_codes),
        candidate=np.bincount(cc, minlength=n_codes) > 0,
    )


def _ordinal_ranks(values: np.ndarray, codes: np.ndarray) -> np.ndarray:
    """Rank 1 = largest value; equal values ordered by ascending event id."""
    order = np.lexsort((codes, -values))
    ranks = np.empty(len(values), dtype=np.int64)
    ranks[order] = np.arange(1, len(values) + 1)
    return ranks


def leverage_scores(db: EventDatabase, drug_code: str, params: MutaraParams) -> list[LeverageScores]:
    """Leverage, unexpected-leverage and both rankings for every candidate event."""
    counts = cohort_counts(db, drug_code, params)
    if counts.n_users == 0:
        return []
    ids = np.flatnonzero(counts.candidate & ~db.excluded_mask)
    lev, unex = (v[ids] for v in counts.leverage_numerators())
    lev_rank, unex_rank = _ordinal_ranks(lev, ids), _ordinal_ranks(unex, ids)
    scale = counts.tot**2
    return [
        LeverageScores(str(db.event_codes[e]), int(lv) / scale, int(ul) / scale, int(lr), int(ur), lr / ur)
        for e, lv, ul, lr, ur in zip(ids, lev, unex, lev_rank, unex_rank)
    ]


def mutara_rank(db: EventDatabase, drug_code: str, params: MutaraParams, algorithm: str = "MUTARA") -> RankedSignalList:
    """Candidates in descending unexpected-leverage; signalled when positive."""
    scores = leverage_scores(db, drug_code, params)
    result = RankedSignalList(drug_code, algorithm)
    result.entries = rank_entries([(s.event_code, s.unexlev) for s in scores], lambda _, __, v: v > 0)
    result.details["scores"] = {s.event_code: s for s in scores}
    return result


def hunt_rank(db: EventDatabase, drug_code: str, params: MutaraParams, algorithm: str = "HUNT") -> RankedSignalList:
    """Candidates in descending leverage-rank / unexpected-leverage-rank.

    The top 10% (rounded up) are signalled.
    """
    scores = leverage_scores(db, drug_code, params)
    result = RankedSignalList(drug_code, algorithm)
    cutoff = top_fraction(len(scores), HUNT_SIGNAL_FRACTION)
    result.entries = rank_entries([(s.event_code, s.rank_ratio) for s in scores], lambda i, _, __: i <= cutoff)
    result.details["scores"] = {s.event_code: s for s in scores}
    return result
