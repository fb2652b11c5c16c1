"""Stage 1: flag flaky job failures and assign them a failure category.

A failed job is flaky when a job with the same ``(project_id, commit_sha,
name)`` succeeds *after* it. Jobs are ordered within a group by
``(created_at, id)``; jobs without ``created_at`` sort last and are neither
flaky candidates nor rerun evidence.
"""

from __future__ import annotations

import logging
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

from .ingest import LABELED_HEADER, Dataset, JobRecord, LabeledJob
from .rulebook import Rulebook, match_category

logger = logging.getLogger(__name__)

UNKNOWN = "unknown"


@dataclass
class RerunGroup:
    key: tuple[str, str, str]
    jobs: list[JobRecord] = field(default_factory=list)


def order_key(job: JobRecord):
    if job.created_at is None:
        return (1, None, job.id)
    return (0, job.created_at, job.id)


def rerun_groups(jobs) -> list[RerunGroup]:
    groups: dict[tuple, RerunGroup] = {}
    for job in jobs:
        key = (job.project_id, job.commit_sha, job.name)
        if key not in groups:
            groups[key] = RerunGroup(key)
        groups[key].jobs.append(job)
    for group in groups.values():
        group.jobs.sort(key=order_key)
    return list(groups.values())


def detect_flaky(jobs) -> dict[int, bool]:
    """Map job id to whether it is a flaky failure."""
    flaky = {job.id: False for job in jobs}
    for group in rerun_groups(jobs):
        later_success = False
        for job in reversed(group.jobs):
            if job.created_at is None:
                continue
            if job.status == "success":
                later_success = True
            elif job.status == "failed" and later_success:
                flaky[job.id] = True
    return flaky


def _categorize(args) -> list[str]:
    rb, logs, max_bytes = args
    out = []
    for log in logs:
        if max_bytes is not None:
            data = log.encode("utf-8")
            if len(data) > max_bytes:
                log = data[:max_bytes].decode("utf-8", errors="ignore")
        out.append(match_category(rb, log) or UNKNOWN)
    return out


def categorize(rb: Rulebook, logs: list[str], workers: int = 1, max_log_bytes: Optional[int] = None) -> list[str]:
    """Categorize logs in order; ``workers > 1`` fans out over processes."""
    if workers <= 1 or len(logs) < 2 * workers:
        return _categorize((rb, logs, max_log_bytes))
    size = -(-len(logs) // (workers * 4))
    chunks = [(rb, logs[i : i + size], max_log_bytes) for i in range(0, len(logs), size)]
    out: list[str] = []
    with ProcessPoolExecutor(max_workers=workers) as pool:
        for part in pool.map(_categorize, chunks):
            out.extend(part)
    return out


def label_dataset(
    jobs: Dataset,
    rb: Rulebook,
    workers: int = 1,
    max_log_bytes: Optional[int] = None,
) -> Dataset:
    flags = detect_flaky(jobs.rows)
    flaky_rows = [job for job in jobs.rows if flags[job.id]]
    categories = iter(categorize(rb, [job.logs for job in flaky_rows], workers, max_log_bytes))
    rows = []
    for job in jobs.rows:
        if flags[job.id]:
            rows.append(LabeledJob.from_job(job, True, next(categories)))
        else:
            rows.append(LabeledJob.from_job(job, False, ""))
    labeled = Dataset(
        rows=tuple(rows),
        source_path=jobs.source_path,
        header=LABELED_HEADER,
        warnings=jobs.warnings,
    )
    log_summary(labeled)
    return labeled


def summarize(labeled: Dataset) -> dict:
    counts = Counter(row.category for row in labeled.rows if row.flaky)
    n_flaky = sum(counts.values())
    return {
        "n_rows": len(labeled.rows),
        "n_flaky": n_flaky,
        "n_unknown": counts.get(UNKNOWN, 0),
        "categories": dict(sorted(counts.items())),
    }


def log_summary(labeled: Dataset) -> None:
    s = summarize(labeled)
    logger.info("labeled %d jobs: %d flaky, %d unknown", s["n_rows"], s["n_flaky"], s["n_unknown"])
    for category, count in s["categories"].items():
        logger.info("  %-28s %d", category, count)
