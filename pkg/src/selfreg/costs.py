"""Feedback types and cumulative human-effort accounting.

Costs mix units (character edits for corrections, word clicks for markings)
into one scalar; the per-type breakdown is kept for reporting.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum


class FeedbackType(Enum):
    FULL = "full"
    WEAK = "weak"
    SELF = "self"
    NONE = "none"

    @classmethod
    def from_name(cls, name: str) -> "FeedbackType":
        try:
            return cls(name.lower())
        except ValueError:
            raise ValueError(f"unknown feedback type: {name!r}") from None


# Enum order doubles as the deterministic tie-break order everywhere.
FEEDBACK_ORDER = (FeedbackType.FULL, FeedbackType.WEAK, FeedbackType.SELF, FeedbackType.NONE)


@dataclass
class CostLedger:
    per_type: dict[FeedbackType, float] = field(
        default_factory=lambda: {t: 0.0 for t in FeedbackType}
    )
    per_type_counts: dict[FeedbackType, int] = field(
        default_factory=lambda: {t: 0 for t in FeedbackType}
    )

    @property
    def total(self) -> float:
        return sum(self.per_type.values())

    def add(self, feedback_type: FeedbackType, cost: float) -> "CostLedger":
        if cost < 0:
            raise ValueError(f"negative cost: {cost}")
        self.per_type[feedback_type] += cost
        self.per_type_counts[feedback_type] += 1
        return self

    def counts_by_name(self) -> dict[str, int]:
        return {t.value: self.per_type_counts[t] for t in FEEDBACK_ORDER}

    def costs_by_name(self) -> dict[str, float]:
        return {t.value: self.per_type[t] for t in FEEDBACK_ORDER}


def ledger_add(ledger: CostLedger, feedback_type: FeedbackType, cost: float) -> CostLedger:
    return ledger.add(feedback_type, cost)
