"""Synthetic CI job corpora with known flaky failures.

Flaky failures are injected as a failed job followed by a successful rerun of
the same (project, commit, job name); the failed job's log carries one marker
line for its category. Everything else is background: successes, genuine
failures (never followed by a passing rerun), cancellations and skips. The
manifest written next to the CSV records the ground truth.
"""

from __future__ import annotations

import json
import math
import random
from dataclasses import dataclass, field
from datetime import datetime, timedelta, timezone
from pathlib import Path
from typing import Optional

from .ingest import JobRecord, write_table, JOB_HEADER


@dataclass(frozen=True)
class CategoryMix:
    name: str
    weight: float
    markers: tuple[str, ...]
    duration_mu: float = 6.0  # log-seconds; exp(6) ~ 7 minutes
    duration_sigma: float = 0.6


# One marker per line; each must be caught by the matching builtin rule and
# by no rule listed before it.
DEFAULT_MIX = (
    CategoryMix("job_timeout", 0.10, (
        "ERROR: Job failed: execution took longer than 1h0m0s seconds",
        "The job exceeded the maximum execution time of 60m",
    ), duration_mu=8.2, duration_sigma=0.1),
    CategoryMix("runner_failure", 0.08, (
        "ERROR: Job failed (system failure): runner system failure",
        "The hosted runner lost communication with the server.",
    ), duration_mu=5.0),
    CategoryMix("connection_error", 0.22, (
        "curl: (7) Failed to connect to ci-cache.internal port 443: Connection refused",
        "fatal: unable to look up host: Temporary failure in name resolution",
        "error: net::ERR: connection reset by peer",
    ), duration_mu=5.5),
    CategoryMix("out_of_memory", 0.15, (
        "Killed process 4242 (rustc) total-vm:9123456kB: OOM killer invoked",
        "fatal runtime error: out of memory",
        "java.lang.OutOfMemoryError: Java heap space",
    ), duration_mu=7.0),
    CategoryMix("docker_pull_error", 0.12, (
        "ERROR: Job failed: failed to pull image \"registry.example.com/ci/base:latest\"",
        "toomanyrequests: You have reached your pull rate limit.",
    ), duration_mu=3.5),
    CategoryMix("git_checkout_error", 0.09, (
        "fatal: unable to access 'https://gitlab.example.com/group/repo.git/': The requested URL returned error: 502",
        "fatal: couldn't find remote ref refs/pipelines/1234",
    ), duration_mu=3.0),
    CategoryMix("dependency_install_error", 0.14, (
        "ERROR: Could not find a version that satisfies the requirement numpy==1.26.4",
        "npm ERR! code EINTEGRITY",
        "error: failed to download crate `serde v1.0.197`",
    ), duration_mu=5.8),
    CategoryMix("disk_quota_exceeded", 0.10, (
        "write /builds/cache/target.tar: no space left on device",
        "cp: error writing 'artifacts/app.bin': Disk quota exceeded",
    ), duration_mu=6.5),
)

NOISE = (
    "$ cargo build --release --locked",
    "   Compiling gamecore-common v0.10.0 (/builds/gamecore/common)",
    "Running with gitlab-runner 16.4.1 on shared-runner-7",
    "Preparing environment",
    "Getting source from Git repository",
    "Fetching changes with git depth set to 20...",
    "Checking out 8f3c2d1a as detached HEAD",
    "Restoring cache",
    "Downloading artifacts",
    "Executing \"step_script\" stage of the job script",
    "test world::sim::tests::tick ... ok",
    "test result: ok. 128 passed; 0 failed; 2 ignored",
    "Uploading artifacts for successful job",
    "Saving cache for successful job",
    "warning: unused variable: `delta`",
    "    Finished release [optimized] target(s) in 4m 12s",
    "Cleaning up project directory and file based variables",
)
GENUINE_FAILURES = (
    "error[E0308]: mismatched types",
    "test result: FAILED. 127 passed; 1 failed; 2 ignored",
    "AssertionError: expected 3 entities, found 2",
    "clippy: this expression creates a reference which is immediately dereferenced",
)
JOB_NAMES = ("build-linux", "build-windows", "unit-tests", "integration-tests", "clippy", "fmt", "docs", "package")
ANSI_WRAPS = (("\x1b[31;1m", "\x1b[0m"), ("\x1b[0K\x1b[31m", "\x1b[0m"), ("\x1b]8;;https://ci/x\x07", "\x1b]8;;\x07"))


@dataclass(frozen=True)
class GeneratorSpec:
    n_jobs: int
    flaky_rate: float = 0.05
    mix: tuple[CategoryMix, ...] = DEFAULT_MIX
    start: datetime = datetime(2023, 1, 1, tzinfo=timezone.utc)
    span_days: int = 365
    seed: int = 0
    n_projects: int = 3

    def __post_init__(self):
        if self.n_jobs < 0:
            raise ValueError("n_jobs must be >= 0")
        if not 0.0 <= self.flaky_rate <= 0.5:
            raise ValueError("flaky_rate must be within [0, 0.5]")
        if self.n_jobs and self.flaky_rate and not self.mix:
            raise ValueError("category mix is empty")
        if self.mix and abs(math.fsum(c.weight for c in self.mix) - 1.0) > 1e-9:
            raise ValueError("category weights must sum to 1")
        if self.span_days <= 0:
            raise ValueError("span_days must be positive")


def manifest_path(out) -> Path:
    out = Path(out)
    return out.with_name(out.stem + ".manifest.json")


@dataclass
class _Builder:
    spec: GeneratorSpec
    rng: random.Random
    jobs: list = field(default_factory=list)
    shas: int = 0

    def sha(self) -> str:
        self.shas += 1
        return f"{self.rng.getrandbits(32):08x}{self.shas:032x}"

    def when(self) -> datetime:
        seconds = self.rng.randrange(self.spec.span_days * 86400)
        return self.spec.start + timedelta(seconds=seconds)

    def log(self, marker: Optional[str] = None, tail: str = "") -> str:
        lines = self.rng.sample(NOISE, self.rng.randint(3, 7))
        if marker is not None:
            if self.rng.random() < 0.3:
                left, right = self.rng.choice(ANSI_WRAPS)
                marker = f"{left}{marker}{right}"
            lines.insert(self.rng.randint(0, len(lines)), marker)
        if tail:
            lines.append(tail)
        return "\n".join(lines) + "\n"

    def add(self, key, status, created, duration, logs) -> datetime:
        started = created + timedelta(seconds=self.rng.randint(1, 120))
        finished = started + timedelta(seconds=duration)
        self.jobs.append((created, len(self.jobs), key, status, started, finished, float(duration), logs))
        return finished


def generate_jobs(spec: GeneratorSpec) -> tuple[list[JobRecord], dict]:
    rng = random.Random(spec.seed)
    b = _Builder(spec, rng)
    projects = [f"group/project-{i}" for i in range(max(1, spec.n_projects))]
    n_flaky = min(round(spec.n_jobs * spec.flaky_rate), spec.n_jobs // 2)
    n_background = spec.n_jobs - 2 * n_flaky

    weights = [c.weight for c in spec.mix]
    flaky_keys = {}
    for _ in range(n_flaky):
        cat = rng.choices(spec.mix, weights=weights)[0]
        key = (rng.choice(projects), b.sha(), rng.choice(JOB_NAMES))
        duration = max(1, round(math.exp(rng.gauss(cat.duration_mu, cat.duration_sigma))))
        created = b.when()
        failed_at = b.add(key, "failed", created, duration, b.log(rng.choice(cat.markers), "ERROR: Job failed"))
        flaky_keys[len(b.jobs) - 1] = cat.name
        rerun = failed_at + timedelta(seconds=rng.randint(30, 3600))
        b.add(key, "success", rerun, rng.randint(60, 900), b.log(tail="Job succeeded"))

    earlier_success = []
    for _ in range(n_background):
        created = b.when()
        u = rng.random()
        if u < 0.80:
            key = (rng.choice(projects), b.sha(), rng.choice(JOB_NAMES))
            b.add(key, "success", created, rng.randint(60, 1800), b.log(tail="Job succeeded"))
            earlier_success.append((created, key))
        elif u < 0.92:
            # genuine failure, sometimes after an earlier success of the same job
            candidates = [k for t, k in earlier_success[-50:] if t < created]
            if candidates and rng.random() < 0.3:
                key = rng.choice(candidates)
            else:
                key = (rng.choice(projects), b.sha(), rng.choice(JOB_NAMES))
            # a genuine failure may even contain a flaky-looking marker
            marker = rng.choice(rng.choice(spec.mix).markers) if spec.mix and rng.random() < 0.1 else None
            tail = rng.choice(GENUINE_FAILURES) + "\nERROR: Job failed: exit code 1"
            b.add(key, "failed", created, rng.randint(60, 1800), b.log(marker, tail))
        else:
            key = (rng.choice(projects), b.sha(), rng.choice(JOB_NAMES))
            status = "canceled" if u < 0.97 else "skipped"
            b.add(key, status, created, rng.randint(0, 60), b.log())

    order = sorted(range(len(b.jobs)), key=lambda i: (b.jobs[i][0], b.jobs[i][1]))
    jobs, flaky_ids, counts, seconds = [], [], {}, {}
    for new_id, i in enumerate(order, start=1):
        created, _, key, status, started, finished, duration, logs = b.jobs[i]
        jobs.append(JobRecord(new_id, key[2], key[0], key[1], status, created, started, finished, duration, logs))
        if i in flaky_keys:
            cat = flaky_keys[i]
            flaky_ids.append(new_id)
            counts[cat] = counts.get(cat, 0) + 1
            seconds[cat] = seconds.get(cat, 0.0) + duration
    manifest = {
        "n_jobs": len(jobs),
        "n_flaky": len(flaky_ids),
        "seed": spec.seed,
        "flaky_rate": spec.flaky_rate,
        "flaky_ids": flaky_ids,
        "category_counts": dict(sorted(counts.items())),
        "category_duration_seconds": dict(sorted(seconds.items())),
    }
    return jobs, manifest


def generate_corpus(spec: GeneratorSpec, out) -> dict:
    """Write ``out`` (jobs CSV) and ``<stem>.manifest.json``; return the manifest."""
    jobs, manifest = generate_jobs(spec)
    write_table(jobs, out, header=JOB_HEADER)
    with open(manifest_path(out), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=1)
        fh.write("\n")
    return manifest
