import logging
import random
from datetime import datetime, timedelta, timezone
from pathlib import Path

import pytest

from flakerank.ingest import JobRecord

FIXTURES = Path(__file__).parent / "fixtures"
T0 = datetime(2024, 1, 1, tzinfo=timezone.utc)

ACCEPTANCE_RESULTS: list[tuple[str, bool, str]] = []


def make_job(id, status="failed", created=0, name="build", project="p", sha="abc", duration=60.0, logs="", **kw):
    """Job factory; ``created`` is minutes after T0, or None."""
    created_at = None if created is None else T0 + timedelta(minutes=created)
    return JobRecord(
        id=id,
        name=name,
        project_id=project,
        commit_sha=sha,
        status=status,
        created_at=created_at,
        duration=duration,
        logs=logs,
        **kw,
    )


def random_jobs(rng: random.Random, n: int, n_keys: int = 4, p_missing: float = 0.05):
    jobs = []
    ids = rng.sample(range(1, 10 * n + 10), n)
    for job_id in ids:
        created = None if rng.random() < p_missing else rng.randint(0, 20)
        jobs.append(
            make_job(
                job_id,
                status=rng.choice(["success", "failed", "failed", "canceled", "skipped"]),
                created=created,
                name=rng.choice(["build", "test"][: max(1, n_keys // 2)]),
                sha=rng.choice(["a", "b"][: max(1, n_keys - n_keys // 2)]),
            )
        )
    return jobs


@pytest.fixture(autouse=True)
def reset_package_logger():
    # the CLI installs its own stderr handler and stops propagation
    yield
    log = logging.getLogger("flakerank")
    log.handlers[:] = []
    log.propagate = True
    log.setLevel(logging.NOTSET)


@pytest.fixture
def fixtures_dir():
    return FIXTURES


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for name, ok, detail in ACCEPTANCE_RESULTS:
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
