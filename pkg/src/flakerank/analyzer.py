"""Stage 2: per-category Recency, Frequency and Monetary values.

For the flaky failures ``J`` of one category:

* recency   = days between the reference date and the newest ``created_at`` in J
* frequency = ``len(J)``
* monetary  = ``sum(duration) / 3600 * cost_rate + len(J) * diagnosis_overhead``
"""

from __future__ import annotations

import logging
import math
from collections import defaultdict
from dataclasses import dataclass
from datetime import datetime
from typing import Iterable, Optional

from .ingest import (
    BadValue,
    Dataset,
    InvariantViolation,
    ValidationError,
    format_float,
    read_table,
)

logger = logging.getLogger(__name__)

RFM_HEADER = ("category", "recency", "frequency", "monetary")
EVOLUTION_HEADER = ("category", "period", "count")


class ReferenceDateBeforeData(ValidationError):
    def __init__(self, reference: datetime, latest: datetime):
        self.reference = reference
        self.latest = latest
        super().__init__(0, f"reference date {reference.isoformat()} precedes flaky job created at {latest.isoformat()}")


@dataclass(frozen=True)
class CostModel:
    cost_rate: float = 1.0
    diagnosis_overhead: float = 0.0
    reference_date: Optional[datetime] = None

    def __post_init__(self):
        for name in ("cost_rate", "diagnosis_overhead"):
            value = getattr(self, name)
            if not math.isfinite(value) or value < 0:
                raise BadValue(0, name, str(value), "must be finite and >= 0")


@dataclass(frozen=True)
class CategoryRFM:
    category: str
    recency_days: float
    frequency: int
    monetary: float

    HEADER = RFM_HEADER

    def to_csv_row(self) -> list[str]:
        return [self.category, format_float(self.recency_days), str(self.frequency), format_float(self.monetary)]


@dataclass(frozen=True)
class EvolutionRow:
    category: str
    period: str
    count: int

    HEADER = EVOLUTION_HEADER

    def to_csv_row(self) -> list[str]:
        return [self.category, self.period, str(self.count)]


def default_reference_date(labeled: Dataset) -> Optional[datetime]:
    finished = [r.finished_at for r in labeled.rows if r.finished_at is not None]
    if finished:
        return max(finished)
    created = [r.created_at for r in labeled.rows if r.created_at is not None]
    return max(created) if created else None


def compute_rfm(labeled: Dataset, cm: CostModel = CostModel()) -> list[CategoryRFM]:
    flaky = [r for r in labeled.rows if r.flaky]
    if not flaky:
        logger.warning("no flaky failures in %s; RFM table is empty", labeled.source_path or "input")
        return []
    reference = cm.reference_date or default_reference_date(labeled)
    latest = max(r.created_at for r in flaky)
    if reference < latest:
        raise ReferenceDateBeforeData(reference, latest)

    by_category: dict[str, list] = defaultdict(list)
    for row in flaky:
        by_category[row.category].append(row)
    out = []
    for category, rows in by_category.items():
        newest = max(r.created_at for r in rows)
        hours = math.fsum(r.duration for r in rows) / 3600.0
        out.append(
            CategoryRFM(
                category=category,
                recency_days=(reference - newest).total_seconds() / 86400.0,
                frequency=len(rows),
                monetary=hours * cm.cost_rate + len(rows) * cm.diagnosis_overhead,
            )
        )
    out.sort(key=lambda c: (-c.monetary, c.category))
    return out


def compute_evolution(labeled: Dataset, granularity: str = "month") -> list[EvolutionRow]:
    """Monthly flaky-failure counts per category, zero months omitted."""
    if granularity != "month":
        raise ValueError(f"unsupported granularity {granularity!r}")
    counts: dict[tuple[str, str], int] = defaultdict(int)
    for row in labeled.rows:
        if row.flaky:
            counts[(row.category, row.created_at.strftime("%Y-%m"))] += 1
    return [EvolutionRow(c, p, n) for (c, p), n in sorted(counts.items())]


def _finite_float(token: str, row: int, name: str) -> float:
    try:
        value = float(token)
    except ValueError:
        raise BadValue(row, name, token, "expected a number") from None
    if not math.isfinite(value) or value < 0:
        raise BadValue(row, name, token, "must be finite and >= 0")
    return value


def read_rfm(path) -> list[CategoryRFM]:
    """Read an RFM table written by :func:`compute_rfm` (or by hand)."""
    _, rows = read_table(path, RFM_HEADER)
    out, seen = [], set()
    for n, rec in rows:
        category = rec["category"].strip()
        if not category:
            raise BadValue(n, "category", "", "must be nonempty")
        if category in seen:
            raise InvariantViolation(n, f"duplicate category {category!r}")
        seen.add(category)
        token = rec["frequency"].strip()
        try:
            frequency = int(token)
        except ValueError:
            raise BadValue(n, "frequency", token, "expected integer") from None
        if frequency < 1:
            raise BadValue(n, "frequency", token, "must be >= 1")
        out.append(
            CategoryRFM(
                category=category,
                recency_days=_finite_float(rec["recency"].strip(), n, "recency"),
                frequency=frequency,
                monetary=_finite_float(rec["monetary"].strip(), n, "monetary"),
            )
        )
    return out


def read_evolution(path) -> list[EvolutionRow]:
    _, rows = read_table(path, EVOLUTION_HEADER)
    out = []
    for n, rec in rows:
        token = rec["count"].strip()
        try:
            count = int(token)
        except ValueError:
            raise BadValue(n, "count", token, "expected integer") from None
        out.append(EvolutionRow(rec["category"].strip(), rec["period"].strip(), count))
    return out


def total_frequency(rfm: Iterable[CategoryRFM]) -> int:
    return sum(c.frequency for c in rfm)
