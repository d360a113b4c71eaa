"""Naive full-scan reference implementations over plain record lists.

Nothing here imports the package's counting code; each function rescans the
raw tuples that were written to CSV.
"""
from collections import defaultdict


class Raw:
    """Cleaned view of raw record tuples, recomputed from scratch."""

    def __init__(self, patients, prescriptions, events, exclusions=()):
        self.reg = {p[0]: p[3].toordinal() for p in patients}
        self.yob = {p[0]: p[1] for p in patients}
        last = {p[0]: max(p[3].toordinal(), p[4].toordinal() if p[4] else 0) for p in patients}
        for pid, _, d in list(prescriptions) + list(events):
            last[pid] = max(last[pid], d.toordinal())
        self.last = last
        self.start = {pid: r + 365 for pid, r in self.reg.items()}
        self.rx = [
            (pid, drug, d.toordinal()) for pid, drug, d in prescriptions
            if d.toordinal() >= self.start[pid] and last[pid] - d.toordinal() >= 30
        ]
        self.ev = [(pid, code[:5], d.toordinal()) for pid, code, d in events if d.toordinal() >= self.start[pid]]
        self.excluded = {c for c, _ in exclusions}
        self.patients = [p[0] for p in patients]

    def codes_between(self, pid, lo, hi):
        return {c for p, c, d in self.ev if p == pid and lo <= d <= hi}


def srs_reports(raw: Raw):
    out = []
    for pid, drug, d in raw.rx:
        for code in sorted(raw.codes_between(pid, d, d + 30)):
            out.append((pid, drug, code))
    return out


def contingency(reports, drug, event):
    w = [0, 0, 0, 0]
    for _, dr, ev in reports:
        if dr == drug and ev == event:
            w[0] += 1
        elif dr == drug:
            w[1] += 1
        elif ev == event:
            w[2] += 1
        else:
            w[3] += 1
    return tuple(w)


def user_windows(raw: Raw, drug, t_e, t_r, t_b):
    """{pid: (hazard codes, reference codes, first-30-day codes)} for every user."""
    days = defaultdict(list)
    for pid, dr, d in raw.rx:
        if dr == drug:
            days[pid].append(d)
    out = {}
    for pid, ds in days.items():
        first = min(ds)
        later = [d for d in ds if d > first]
        t_h = t_e
        if later and min(later) - first <= t_e:
            t_h = min(later) - first + t_e
        out[pid] = (
            raw.codes_between(pid, first, first + t_h),
            raw.codes_between(pid, first - t_b, first - t_b + t_r - 1),
            raw.codes_between(pid, first, first + 30),
        )
    return out


def supports(raw: Raw, drug, event, params, nonuser_windows):
    """Integer support counts; non-user windows are (pid, start ordinal, end ordinal)."""
    users = user_windows(raw, drug, params.t_e, params.t_r, params.t_b)
    n_ac = sum(event in h for h, _, _ in users.values())
    n_ahatc = sum(event in h and event not in r for h, r, _ in users.values())
    n_nc = sum(event in raw.codes_between(pid, s, e) for pid, s, e in nonuser_windows)
    return {
        "tot": len(users) + len(nonuser_windows),
        "n_users": len(users),
        "n_ac": n_ac,
        "n_c": n_ac + n_nc,
        "n_ahatc": n_ahatc,
        "n_hatc": n_ahatc + n_nc,
    }


def eras(raw: Raw):
    """(pid, drug, day) for prescriptions with no same-drug prescription in the prior 395 days."""
    seen = defaultdict(set)
    for pid, drug, d in raw.rx:
        seen[(pid, drug)].add(d)
    out = []
    for (pid, drug), ds in seen.items():
        for d in ds:
            if not any(d - 395 < x < d for x in ds):
                out.append((pid, drug, d))
    return sorted(out)


def period_counts(raw: Raw, drug, event, start, end):
    n_xy = n_x = n_y = n_dd = 0
    for pid, dr, d in eras(raw):
        if d + start < raw.start[pid] or d + end > raw.last[pid]:
            continue
        has = event in raw.codes_between(pid, d + start, d + end)
        n_dd += 1
        n_y += has
        if dr == drug:
            n_x += 1
            n_xy += has
    return n_xy, n_x, n_y, n_dd
