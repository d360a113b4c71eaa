"""Temporal Pattern Discovery.

Counts are taken over first-in-13-months prescription eras.  The information
component (IC) is a log2 observed/expected ratio with 1/2 added to both
terms; the IC_delta contrast rescales the follow-up expectation by the
observed/expected ratio of a control period 27 to 21 months before the era.

Credibility bounds are quantiles of the Gamma(n + 1/2, rate E + 1/2)
posterior.  The printed integral this is usually quoted with has a stray
``exp(-(n + 1/2))`` factor that does not depend on the integration variable;
read literally it is not a density, so the Gamma posterior is used instead.
"""
from __future__ import annotations

from typing import NamedTuple

import numpy as np
from scipy.special import gammainc

from .errors import ConvergenceError, UndefinedValueError
from .ranking import RankedSignalList, rank_entries
from .store import EventDatabase, all_eras

QUANTILE_TOL = 1e-9
CANDIDATE_WINDOW_DAYS = 30
VARIANTS = ("tpd1", "tpd2")


class TimeWindow(NamedTuple):
    label: str
    start_offset_days: int
    end_offset_days: int


DAY0 = TimeWindow("day0", 0, 0)
MONTH_AFTER = TimeWindow("month_after", 1, 30)
MONTH_BEFORE = TimeWindow("month_before", -30, -1)
# 27 to 21 months before, with 30-day months
CONTROL = TimeWindow("control", -810, -630)
WINDOWS = {w.label: w for w in (DAY0, MONTH_AFTER, MONTH_BEFORE, CONTROL)}


class PeriodCounts(NamedTuple):
    n_xy: int
    n_x: int
    n_y: int
    n_dotdot: int

    @property
    def E_xy(self) -> float:
        return self.n_x * self.n_y / self.n_dotdot if self.n_dotdot > 0 else 0.0


class IcEstimate(NamedTuple):
    ic: float
    ci_low: float
    ci_high: float


class TpdScore(NamedTuple):
    event_code: str
    ic_delta: float
    ic_delta_ci_low: float
    ic_delta_ci_high: float
    ic_day0: float
    ic_month_before: float
    ic_month_after: float
    filtered_by: str  # "none", "tpd1" or "tpd2"


# ------------------------------------------------------------------ numerics
def expected(counts: PeriodCounts) -> float:
    if counts.n_dotdot <= 0:
        raise UndefinedValueError("expected count undefined: no eras with follow-up in window")
    return counts.n_x * counts.n_y / counts.n_dotdot


def ic_shrunk(n_xy, E_xy):
    """log2((n + 1/2) / (E + 1/2)); works on scalars and arrays."""
    out = np.log2((np.asarray(n_xy, dtype=float) + 0.5) / (np.asarray(E_xy, dtype=float) + 0.5))
    return float(out) if out.ndim == 0 else out


def gamma_quantile(shape, rate, q, tol: float = QUANTILE_TOL, max_iter: int = 400):
    """q-quantile of Gamma(shape, rate) by bisection on the regularised
    lower incomplete gamma, stopping once |P(x) - q| <= tol."""
    shape, rate, q = np.broadcast_arrays(*(np.asarray(v, dtype=float) for v in (shape, rate, q)))
    shape, rate, q = shape.ravel(), rate.ravel(), q.ravel()
    if np.any((q <= 0) | (q >= 1)):
        raise ValueError("q must lie in (0, 1)")
    if np.any(shape <= 0) or np.any(rate <= 0):
        raise ValueError("shape and rate must be positive")
    lo = np.zeros_like(shape)
    hi = np.maximum(shape, 1.0) * 4.0 + 10.0
    for _ in range(64):
        short = gammainc(shape, hi) < q
        if not short.any():
            break
        hi[short] *= 4.0
    x = 0.5 * (lo + hi)
    done = np.zeros(len(x), dtype=bool)
    for _ in range(max_iter):
        p = gammainc(shape, x)
        done |= np.abs(p - q) <= tol
        if done.all():
            break
        below = p < q
        lo = np.where(~done & below, x, lo)
        hi = np.where(~done & ~below, x, hi)
        x = np.where(done, x, 0.5 * (lo + hi))
    else:
        bad = np.flatnonzero(~done)
        i = bad[0]
        raise ConvergenceError(
            f"gamma quantile did not converge for {len(bad)} inputs; first: shape={shape[i]}, "
            f"rate={rate[i]}, q={q[i]}, bracket=[{lo[i]}, {hi[i]}], P={gammainc(shape[i], x[i])}"
        )
    return x / rate


def ic_credibility(n_xy, E_xy, q: float, tol: float = QUANTILE_TOL):
    """log2 of the q-quantile of the Gamma(n + 1/2, E + 1/2) posterior."""
    n = np.asarray(n_xy, dtype=float)
    e = np.asarray(E_xy, dtype=float)
    out = np.log2(gamma_quantile(n + 0.5, e + 0.5, q, tol=tol)).reshape(np.broadcast(n, e).shape)
    return float(out) if out.ndim == 0 else out


def _rescaled_expectation(n_u, e_u, n_v, e_v):
    return (np.asarray(n_v, dtype=float) + 0.5) / (np.asarray(e_v, dtype=float) + 0.5) * e_u


def ic_delta(counts_u: PeriodCounts, counts_v: PeriodCounts, tol: float = QUANTILE_TOL) -> IcEstimate:
    """IC of the follow-up window with its expectation scaled by the
    (shrunk) observed/expected ratio of the control window."""
    e_star = float(_rescaled_expectation(counts_u.n_xy, counts_u.E_xy, counts_v.n_xy, counts_v.E_xy))
    return IcEstimate(
        ic_shrunk(counts_u.n_xy, e_star),
        ic_credibility(counts_u.n_xy, e_star, 0.025, tol),
        ic_credibility(counts_u.n_xy, e_star, 0.975, tol),
    )


# -------------------------------------------------------------------- counts
class WindowTable(NamedTuple):
    n_dotdot: int
    n_x: np.ndarray  # per drug id
    n_y: np.ndarray  # per event id
    pair_keys: np.ndarray  # sorted drug * n_codes + event
    pair_counts: np.ndarray

    def n_xy(self, drug: int, n_codes: int) -> np.ndarray:
        lo, hi = np.searchsorted(self.pair_keys, [drug * n_codes, (drug + 1) * n_codes])
        out = np.zeros(n_codes, dtype=np.int64)
        out[self.pair_keys[lo:hi] - drug * n_codes] = self.pair_counts[lo:hi]
        return out


def window_table(db: EventDatabase, window: TimeWindow) -> WindowTable:
    """Era counts for one window across every drug and event."""

    def build():
        patient, drug, day = all_eras(db)
        lo, hi = day + window.start_offset_days, day + window.end_offset_days
        covered = (lo >= db.observation_start_day[patient]) & (hi <= db.last_active_day[patient])
        patient, drug, lo, hi = patient[covered], drug[covered], lo[covered], hi[covered]
        n_codes = len(db.event_codes)
        query, code = db.window_pairs(patient, lo, hi)
        keys, counts = np.unique(drug[query] * n_codes + code, return_counts=True)
        return WindowTable(
            int(covered.sum()),
            np.bincount(drug, minlength=len(db.drug_codes)),
            np.bincount(code, minlength=n_codes),
            keys,
            counts,
        )

    return db.cached(("tpd_window", window), build)


def period_counts(db: EventDatabase, drug_code: str, event_code: str, window: TimeWindow) -> PeriodCounts:
    table = window_table(db, window)
    drug, event = db.drug_id(drug_code), db.event_id(event_code)
    n_x = int(table.n_x[drug]) if drug is not None else 0
    n_y = int(table.n_y[event]) if event is not None else 0
    n_xy = 0
    if drug is not None and event is not None:
        n_xy = int(table.n_xy(drug, len(db.event_codes))[event])
    return PeriodCounts(n_xy, n_x, n_y, table.n_dotdot)


def _window_ic(db, drug, ids, window):
    table = window_table(db, window)
    n_xy = table.n_xy(drug, len(db.event_codes))[ids]
    e_xy = table.n_x[drug] * table.n_y[ids] / table.n_dotdot if table.n_dotdot else np.zeros(len(ids))
    return n_xy, e_xy


def tpd_scores(db: EventDatabase, drug_code: str, variant: str = "tpd1", tol: float = QUANTILE_TOL) -> list[TpdScore]:
    """Score every candidate event, marking those removed by the variant's filter."""
    if variant not in VARIANTS:
        raise ValueError(f"unknown TPD variant {variant!r}")
    drug = db.drug_id(drug_code)
    if drug is None:
        return []
    patient, drugs, day = all_eras(db)
    mine = drugs == drug
    if not mine.any():
        return []
    _, near = db.window_pairs(patient[mine], day[mine], day[mine] + CANDIDATE_WINDOW_DAYS)
    present = np.zeros(len(db.event_codes), dtype=bool)
    present[near] = True
    ids = np.flatnonzero(present & ~db.excluded_mask)
    if len(ids) == 0:
        return []

    n_u, e_u = _window_ic(db, drug, ids, MONTH_AFTER)
    n_v, e_v = _window_ic(db, drug, ids, CONTROL)
    e_star = _rescaled_expectation(n_u, e_u, n_v, e_v)
    delta = np.log2((n_u + 0.5) / (e_star + 0.5))
    ci_low = ic_credibility(n_u, e_star, 0.025, tol)
    ci_high = ic_credibility(n_u, e_star, 0.975, tol)
    ic_after = ic_shrunk(n_u, e_u)
    ic_before = ic_shrunk(*_window_ic(db, drug, ids, MONTH_BEFORE))
    ic_day0 = ic_shrunk(*_window_ic(db, drug, ids, DAY0))

    removed = ic_before > ic_after
    if variant == "tpd1":
        removed |= ic_day0 > ic_after
    return [
        TpdScore(str(db.event_codes[e]), float(d), float(lo), float(hi), float(z), float(b), float(a),
                 variant if r else "none")
        for e, d, lo, hi, z, b, a, r in zip(ids, delta, ci_low, ci_high, ic_day0, ic_before, ic_after, removed)
    ]


def tpd_rank(db: EventDatabase, drug_code: str, variant: str = "tpd1", tol: float = QUANTILE_TOL) -> RankedSignalList:
    """Unfiltered candidates by descending IC_delta; signalled when the
    lower credibility bound is positive."""
    scores = tpd_scores(db, drug_code, variant, tol)
    kept = {s.event_code: s for s in scores if s.filtered_by == "none"}
    result = RankedSignalList(drug_code, variant.upper())
    result.entries = rank_entries(
        [(c, s.ic_delta) for c, s in kept.items()], lambda _, code, __: kept[code].ic_delta_ci_low > 0
    )
    result.details["scores"] = {s.event_code: s for s in scores}
    return result
