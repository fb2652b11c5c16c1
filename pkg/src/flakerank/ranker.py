"""Stage 3: score, cluster and rank failure categories.

Each RFM dimension is turned into a 1-5 score from strict ranks, categories
are clustered on their score triples, and every cluster gets a pattern such
as ``R↑F↑M↓`` by comparing its centroid to the mean score over all
categories. Clusters are prioritized by their (M, F, R) centroid, categories
within a cluster by monetary, frequency, recency and name.
"""

from __future__ import annotations

import bisect
import json
import math
from collections import defaultdict
from dataclasses import dataclass
from typing import Optional, Sequence

from .analyzer import CategoryRFM, EvolutionRow
from .clustering import DEFAULT_RESTARTS, DEFAULT_SEED, ClusterModel, kmeans_fit, select_k
from .ingest import BadValue, InvariantViolation, format_float, read_table

HIGHER_IS_BETTER = "higher_is_better"
LOWER_IS_BETTER = "lower_is_better"

RANKED_HEADER = (
    "category",
    "recency",
    "frequency",
    "monetary",
    "r_score",
    "f_score",
    "m_score",
    "cluster",
    "pattern",
    "rank",
)

PATTERN_LABELS = {
    "R↑F↑M↑": "persistent & wasteful",
    "R↑F↑M↓": "persistent",
    "R↑F↓M↑": "recently expensive",
    "R↓F↑M↑": "legacy drain",
    "R↑F↓M↓": "emerging",
    "R↓F↑M↓": "fading churn",
    "R↓F↓M↑": "past incident",
    "R↓F↓M↓": "dormant",
}

NO_CATEGORIES = "No flaky failure categories found."


class EmptyInput(ValueError):
    pass


def score_quintiles(values: Sequence[float], direction: str = HIGHER_IS_BETTER) -> list[int]:
    """Score each value 1-5 by the share of values strictly worse than it.

    ``1 + floor(5 * worse / n)``, capped at 5, where *worse* counts values
    below (higher_is_better) or above (lower_is_better). Ties score equally.
    """
    n = len(values)
    if n == 0:
        raise EmptyInput("cannot score an empty list")
    if direction not in (HIGHER_IS_BETTER, LOWER_IS_BETTER):
        raise ValueError(f"unknown direction {direction!r}")
    ordered = sorted(values)
    scores = []
    for v in values:
        if direction == HIGHER_IS_BETTER:
            worse = bisect.bisect_left(ordered, v)
        else:
            worse = n - bisect.bisect_right(ordered, v)
        scores.append(min(5, 1 + (5 * worse) // n))
    return scores


def pattern_ascii(pattern: str) -> str:
    return pattern.replace("↑", "+").replace("↓", "-")


def pattern_from_ascii(token: str) -> str:
    return token.replace("+", "↑").replace("-", "↓")


def pattern_for(centroid: Sequence[float], means: Sequence[float]) -> str:
    return "".join(
        f"{dim}{'↑' if c >= m else '↓'}" for dim, c, m in zip("RFM", centroid, means)
    )


@dataclass(frozen=True)
class ScoredCategory:
    category: str
    recency_days: float
    frequency: int
    monetary: float
    r_score: int
    f_score: int
    m_score: int

    @property
    def scores(self) -> tuple[int, int, int]:
        return (self.r_score, self.f_score, self.m_score)


@dataclass(frozen=True)
class RankedCategory(ScoredCategory):
    cluster: int = 0
    pattern: str = ""
    rank: int = 0

    HEADER = RANKED_HEADER

    @property
    def label(self) -> str:
        return PATTERN_LABELS[self.pattern]

    def to_csv_row(self) -> list[str]:
        return [
            self.category,
            format_float(self.recency_days),
            str(self.frequency),
            format_float(self.monetary),
            str(self.r_score),
            str(self.f_score),
            str(self.m_score),
            str(self.cluster),
            pattern_ascii(self.pattern),
            str(self.rank),
        ]


def score_rfm(rfm: Sequence[CategoryRFM]) -> list[ScoredCategory]:
    r = score_quintiles([c.recency_days for c in rfm], LOWER_IS_BETTER)
    f = score_quintiles([c.frequency for c in rfm], HIGHER_IS_BETTER)
    m = score_quintiles([c.monetary for c in rfm], HIGHER_IS_BETTER)
    return [
        ScoredCategory(c.category, c.recency_days, c.frequency, c.monetary, rs, fs, ms)
        for c, rs, fs, ms in zip(rfm, r, f, m)
    ]


def _mean(rows) -> tuple[float, ...]:
    return tuple(math.fsum(col) / len(rows) for col in zip(*rows))


def fit_clusters(
    points: list[tuple[float, ...]],
    k: Optional[int] = None,
    seed: int = DEFAULT_SEED,
    restarts: int = DEFAULT_RESTARTS,
) -> ClusterModel:
    if k is not None:
        return kmeans_fit(points, k, seed=seed, restarts=restarts)
    distinct = len(set(points))
    if len(points) < 3 or distinct < 2:
        return kmeans_fit(points, 1, seed=seed, restarts=restarts)
    # more clusters than distinct points would only split duplicates
    _, model = select_k(points, k_max=min(8, len(points) - 1, distinct), seed=seed, restarts=restarts)
    return model


def rank_with_model(
    rfm: Sequence[CategoryRFM],
    k: Optional[int] = None,
    seed: int = DEFAULT_SEED,
    restarts: int = DEFAULT_RESTARTS,
) -> tuple[list[RankedCategory], Optional[ClusterModel]]:
    """Like :func:`rank_categories` but also return the (relabeled) cluster model."""
    if not rfm:
        return [], None
    names = [c.category for c in rfm]
    if len(set(names)) != len(names):
        raise ValueError("category names must be unique")
    scored = score_rfm(rfm)
    points = [tuple(float(s) for s in c.scores) for c in scored]
    model = fit_clusters(points, k, seed, restarts)

    # centroid dims are (R, F, M); priority compares M, then F, then R
    order = sorted(
        range(model.k),
        key=lambda j: (-model.centroids[j][2], -model.centroids[j][1], -model.centroids[j][0], j),
    )
    model = model.relabel(order)
    means = _mean(points)
    patterns = [pattern_for(c, means) for c in model.centroids]

    ordered = sorted(
        zip(scored, model.assignments),
        key=lambda t: (t[1], -t[0].monetary, -t[0].frequency, t[0].recency_days, t[0].category),
    )
    ranked = [
        RankedCategory(
            s.category, s.recency_days, s.frequency, s.monetary,
            s.r_score, s.f_score, s.m_score,
            cluster=cluster, pattern=patterns[cluster], rank=i,
        )
        for i, (s, cluster) in enumerate(ordered, start=1)
    ]
    return ranked, model


def rank_categories(
    rfm: Sequence[CategoryRFM],
    k: Optional[int] = None,
    seed: int = DEFAULT_SEED,
    restarts: int = DEFAULT_RESTARTS,
) -> list[RankedCategory]:
    """Score, cluster and rank categories. Output is sorted by rank."""
    return rank_with_model(rfm, k, seed, restarts)[0]


def dump_model(model: Optional[ClusterModel], path) -> None:
    data = model.to_dict() if model is not None else None
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(data, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_ranked(path) -> list[RankedCategory]:
    _, rows = read_table(path, RANKED_HEADER)
    out = []
    for n, rec in rows:
        try:
            values = {c: rec[c].strip() for c in RANKED_HEADER}
            row = RankedCategory(
                category=values["category"],
                recency_days=float(values["recency"]),
                frequency=int(values["frequency"]),
                monetary=float(values["monetary"]),
                r_score=int(values["r_score"]),
                f_score=int(values["f_score"]),
                m_score=int(values["m_score"]),
                cluster=int(values["cluster"]),
                pattern=pattern_from_ascii(values["pattern"]),
                rank=int(values["rank"]),
            )
        except ValueError as exc:
            raise BadValue(n, "row", ",".join(rec.values()), str(exc)) from None
        if row.pattern not in PATTERN_LABELS:
            raise InvariantViolation(n, f"unknown pattern {values['pattern']!r}")
        out.append(row)
    return out


# -- report -------------------------------------------------------------------

_BLOCKS = "▁▂▃▄▅▆▇█"


def _months(first: str, last: str) -> list[str]:
    y, m = int(first[:4]), int(first[5:7])
    out = []
    while f"{y:04d}-{m:02d}" <= last:
        out.append(f"{y:04d}-{m:02d}")
        y, m = (y + 1, 1) if m == 12 else (y, m + 1)
    return out


def sparkline(counts: Sequence[int]) -> str:
    top = max(counts, default=0)
    if top <= 0:
        return "·" * len(counts)
    return "".join("·" if c <= 0 else _BLOCKS[(c * len(_BLOCKS) - 1) // top] for c in counts)


def _money(x: float) -> str:
    return f"{x:,.2f}"


def render_report(ranked: Sequence[RankedCategory], evolution: Optional[Sequence[EvolutionRow]] = None) -> str:
    lines = ["# Flaky failure categories", ""]
    if not ranked:
        lines += [NO_CATEGORIES, ""]
        return "\n".join(lines)

    ranked = sorted(ranked, key=lambda r: r.rank)
    clusters: dict[int, list[RankedCategory]] = defaultdict(list)
    for row in ranked:
        clusters[row.cluster].append(row)
    total_failures = sum(r.frequency for r in ranked)
    total_cost = math.fsum(r.monetary for r in ranked)
    lines += [
        f"{len(ranked)} categories in {len(clusters)} cluster(s); "
        f"{total_failures} flaky failures costing {_money(total_cost)} in total.",
        "",
        "## Ranking",
        "",
        "| Rank | Category | Pattern | Label | Cluster | Recency (days) | Frequency | Monetary | R | F | M |",
        "|---:|---|---|---|---:|---:|---:|---:|---:|---:|---:|",
    ]
    for r in ranked:
        lines.append(
            f"| {r.rank} | {r.category} | {r.pattern} | {r.label} | {r.cluster} "
            f"| {r.recency_days:.2f} | {r.frequency} | {_money(r.monetary)} "
            f"| {r.r_score} | {r.f_score} | {r.m_score} |"
        )

    lines += ["", "## Patterns", ""]
    for cluster in sorted(clusters):
        rows = clusters[cluster]
        pattern = rows[0].pattern
        names = ", ".join(r.category for r in rows)
        lines.append(
            f"- **{pattern} {PATTERN_LABELS[pattern]}** (cluster {cluster}): "
            f"{len(rows)} categories, {sum(r.frequency for r in rows)} failures, "
            f"cost {_money(math.fsum(r.monetary for r in rows))}: {names}"
        )

    lines += ["", "## Top 5 costliest", ""]
    costliest = sorted(ranked, key=lambda r: (-r.monetary, r.category))[:5]
    for i, r in enumerate(costliest, start=1):
        lines.append(f"{i}. `{r.category}`: {_money(r.monetary)} over {r.frequency} failures (rank {r.rank})")

    if evolution:
        periods = sorted({e.period for e in evolution})
        months = _months(periods[0], periods[-1])
        by_cat: dict[str, dict[str, int]] = defaultdict(dict)
        for e in evolution:
            by_cat[e.category][e.period] = e.count
        lines += [
            "",
            "## Monthly evolution",
            "",
            f"Months {months[0]} to {months[-1]}, one character per month.",
            "",
            "| Category | Trend | Peak | Last month |",
            "|---|---|---:|---:|",
        ]
        order = [r.category for r in ranked if r.category in by_cat]
        order += sorted(set(by_cat) - set(order))
        for cat in order:
            counts = [by_cat[cat].get(m, 0) for m in months]
            lines.append(f"| {cat} | `{sparkline(counts)}` | {max(counts)} | {counts[-1]} |")

    lines.append("")
    return "\n".join(lines)
