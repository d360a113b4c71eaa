"""Ranked signal lists shared by every algorithm."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Iterator, NamedTuple

ALGORITHMS = ("ROR05", "MUTARA60", "MUTARA180", "HUNT60", "HUNT180", "TPD1", "TPD2")


class SignalEntry(NamedTuple):
    event_code: str
    score: float
    rank: int
    signalled: bool


@dataclass
class RankedSignalList:
    drug_code: str
    algorithm: str
    entries: list[SignalEntry] = field(default_factory=list)
    details: dict[str, Any] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self) -> Iterator[SignalEntry]:
        return iter(self.entries)

    def __getitem__(self, i):
        return self.entries[i]

    @property
    def event_codes(self) -> list[str]:
        return [e.event_code for e in self.entries]

    @property
    def n_signalled(self) -> int:
        return sum(e.signalled for e in self.entries)

    def position(self, event_code: str) -> int | None:
        """1-based rank of ``event_code``, or None if it is not a candidate."""
        for e in self.entries:
            if e.event_code == event_code:
                return e.rank
        return None


def rank_entries(scored, signalled) -> list[SignalEntry]:
    """Order ``(event_code, score)`` pairs by descending score, ties by code.

    ``signalled`` is called with ``(position, code, score)`` for each ranked entry.
    """
    ordered = sorted(scored, key=lambda item: (-item[1], item[0]))
    return [
        SignalEntry(code, float(score), i, bool(signalled(i, code, score)))
        for i, (code, score) in enumerate(ordered, start=1)
    ]


def top_fraction(n: int, fraction: float = 0.10) -> int:
    return math.ceil(round(fraction * n, 9))
