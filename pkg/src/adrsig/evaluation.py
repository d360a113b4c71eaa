"""Ranking evaluation against known-ADR ground truth."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, NamedTuple

import numpy as np

from .errors import DatasetError
from .ranking import RankedSignalList
from .store import EVENT_CODE_LENGTH

FREQUENCY_CLASSES = ("common", "less_common", "rare")


@dataclass(frozen=True)
class GroundTruth:
    """Known (drug, event) pairs, each tagged with a frequency class."""

    entries: dict[tuple[str, str], str] = field(default_factory=dict)

    @classmethod
    def from_rows(cls, rows: Iterable[tuple[str, str, str]]) -> "GroundTruth":
        entries: dict[tuple[str, str], str] = {}
        for drug, event, frequency in rows:
            if frequency not in FREQUENCY_CLASSES:
                raise ValueError(f"unknown frequency class {frequency!r}")
            key = (drug, event[:EVENT_CODE_LENGTH])
            if key in entries:
                raise ValueError(f"duplicate ground-truth pair {key}")
            entries[key] = frequency
        return cls(entries)

    @classmethod
    def load(cls, path) -> "GroundTruth":
        path = Path(path)
        if not path.is_file():
            raise DatasetError(f"ground truth file not found: {path}")
        with path.open(newline="", encoding="utf-8") as fh:
            reader = csv.DictReader(fh)
            missing = {"drug_code", "event_code", "frequency"} - set(reader.fieldnames or ())
            if missing:
                raise DatasetError(f"ground truth file {path} is missing columns {sorted(missing)}")
            try:
                return cls.from_rows(
                    (r["drug_code"].strip(), r["event_code"].strip(), r["frequency"].strip().lower())
                    for r in reader
                )
            except ValueError as exc:
                raise DatasetError(f"{path}: {exc}") from exc

    def is_listed(self, drug_code: str, event_code: str, classes=FREQUENCY_CLASSES) -> bool:
        return self.entries.get((drug_code, event_code)) in classes

    def frequency(self, drug_code: str, event_code: str) -> str | None:
        return self.entries.get((drug_code, event_code))

    def for_drug(self, drug_code: str) -> dict[str, str]:
        return {e: f for (d, e), f in self.entries.items() if d == drug_code}


class LabeledEntry(NamedTuple):
    rank: int
    event_code: str
    score: float
    y: int


@dataclass
class LabeledRanking:
    drug_code: str
    entries: list[LabeledEntry]

    @property
    def y(self) -> np.ndarray:
        return np.array([e.y for e in self.entries], dtype=np.int64)

    def __len__(self) -> int:
        return len(self.entries)


def label(ranking: RankedSignalList, truth: GroundTruth, drug_code: str | None = None,
          classes=FREQUENCY_CLASSES) -> LabeledRanking:
    drug_code = drug_code or ranking.drug_code
    return LabeledRanking(
        drug_code,
        [
            LabeledEntry(i, e.event_code, e.score, int(truth.is_listed(drug_code, e.event_code, classes)))
            for i, e in enumerate(ranking, start=1)
        ],
    )


def precision_at_k(labeled: LabeledRanking, k: int) -> float:
    """Fraction of known ADRs among the top ``k`` events."""
    if not 1 <= k <= len(labeled):
        raise ValueError(f"K={k} outside 1..{len(labeled)}")
    return float(labeled.y[:k].sum()) / k


def average_precision(labeled: LabeledRanking) -> float:
    """Mean of P(K) over the positions K holding a known ADR; 0 if there are none."""
    y = labeled.y
    hits = int(y.sum())
    if hits == 0:
        return 0.0
    k = np.flatnonzero(y) + 1
    return float(np.sum(np.cumsum(y)[k - 1] / k) / hits)


def rare_only_ap(labeled_full: LabeledRanking, truth: GroundTruth, drug_code: str | None = None) -> float:
    """AP counting only rare ADRs, after removing common and less common ones from the list."""
    drug_code = drug_code or labeled_full.drug_code
    keep = [
        e for e in labeled_full.entries
        if not truth.is_listed(drug_code, e.event_code, ("common", "less_common"))
    ]
    relabeled = LabeledRanking(
        drug_code,
        [
            LabeledEntry(i, e.event_code, e.score, int(truth.is_listed(drug_code, e.event_code, ("rare",))))
            for i, e in enumerate(keep, start=1)
        ],
    )
    return average_precision(relabeled)


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    fn: int
    tn: int

    def __add__(self, other: "ConfusionCounts") -> "ConfusionCounts":
        return ConfusionCounts(self.tp + other.tp, self.fp + other.fp, self.fn + other.fn, self.tn + other.tn)

    @property
    def signals(self) -> int:
        return self.tp + self.fp

    # None marks an undefined ratio (zero denominator)
    @property
    def sensitivity(self) -> float | None:
        return _ratio(self.tp, self.tp + self.fn)

    @property
    def specificity(self) -> float | None:
        return _ratio(self.tn, self.tn + self.fp)

    @property
    def precision(self) -> float | None:
        return _ratio(self.tp, self.tp + self.fp)

    def as_dict(self) -> dict:
        return {
            "signals": self.signals, "tp": self.tp, "fp": self.fp, "fn": self.fn, "tn": self.tn,
            "sensitivity": self.sensitivity, "specificity": self.specificity, "precision": self.precision,
        }


def _ratio(num: int, den: int) -> float | None:
    return num / den if den else None


def natural_threshold_confusion(labeled: LabeledRanking, signalled_flags) -> ConfusionCounts:
    flags = np.asarray(list(signalled_flags), dtype=bool)
    if len(flags) != len(labeled):
        raise ValueError("signalled flags must align with the labeled ranking")
    y = labeled.y.astype(bool)
    return ConfusionCounts(
        int(np.sum(flags & y)), int(np.sum(flags & ~y)), int(np.sum(~flags & y)), int(np.sum(~flags & ~y))
    )


@dataclass(frozen=True)
class RocCurve:
    fpr: np.ndarray
    tpr: np.ndarray

    @property
    def points(self) -> list[tuple[float, float]]:
        return list(zip(self.fpr.tolist(), self.tpr.tolist()))


def pooled_roc(labeled_rankings: Iterable[LabeledRanking]) -> RocCurve:
    """ROC of all drugs' lists merged and sorted by score.

    Ties are ordered by (drug_code, event_code); each pooled entry is one
    threshold step.
    """
    pool = [(-e.score, lr.drug_code, e.event_code, e.y) for lr in labeled_rankings for e in lr.entries]
    pool.sort(key=lambda item: item[:3])
    y = np.array([item[3] for item in pool], dtype=np.int64)
    positives = int(y.sum())
    negatives = len(y) - positives
    if positives == 0 or negatives == 0:
        raise ValueError("pooled ROC needs at least one positive and one negative")
    tpr = np.r_[0, np.cumsum(y)] / positives
    fpr = np.r_[0, np.cumsum(1 - y)] / negatives
    return RocCurve(fpr, tpr)


def partial_auc(curve: RocCurve, fpr_limit: float = 1.0) -> float:
    """Trapezoidal area under the curve for FPR in [0, fpr_limit]."""
    if not 0 < fpr_limit <= 1:
        raise ValueError("fpr_limit must lie in (0, 1]")
    x, y = np.asarray(curve.fpr, dtype=float), np.asarray(curve.tpr, dtype=float)
    inside = x <= fpr_limit
    xs, ys = x[inside], y[inside]
    beyond = np.flatnonzero(~inside)
    if len(beyond):
        j = beyond[0]
        # j > 0 because the curve starts at FPR 0
        x0, y0, x1, y1 = x[j - 1], y[j - 1], x[j], y[j]
        y_cut = y0 + (y1 - y0) * (fpr_limit - x0) / (x1 - x0)
        xs, ys = np.r_[xs, fpr_limit], np.r_[ys, y_cut]
    return float(np.sum((xs[1:] - xs[:-1]) * (ys[1:] + ys[:-1]) / 2))
