"""Reading, validating and writing the CSV tables passed between stages.

Jobs tables use the header::

    id,name,project_id,commit_sha,status,created_at,started_at,finished_at,duration[,logs]

Labeled tables append ``flaky,category``.  Timestamps are RFC 3339 and are
normalized to UTC on read; they are always written back as ``...Z``.
Output uses RFC 4180 quoting with CRLF row endings, so a bare ``\r`` inside
a log survives a round trip.
"""

from __future__ import annotations

import csv
import io
import logging
import math
import re
import sys
from contextlib import contextmanager
from dataclasses import dataclass, fields
from datetime import datetime, timedelta, timezone
from pathlib import Path
from typing import Iterator, Optional, Sequence

logger = logging.getLogger(__name__)

STATUSES = ("success", "failed", "canceled", "skipped")

JOB_COLUMNS = (
    "id",
    "name",
    "project_id",
    "commit_sha",
    "status",
    "created_at",
    "started_at",
    "finished_at",
    "duration",
)
JOB_HEADER = JOB_COLUMNS + ("logs",)
LABELED_HEADER = JOB_HEADER + ("flaky", "category")

csv.field_size_limit(sys.maxsize)


class IngestError(Exception):
    """Base class for table reading problems. ``exit_code`` maps to the CLI."""

    exit_code = 1


class InputError(IngestError):
    exit_code = 1


class MissingColumn(InputError):
    def __init__(self, name: str, path: str = ""):
        self.name = name
        super().__init__(f"{path or 'input'}: missing column {name!r}")


class MissingLogFile(InputError):
    def __init__(self, job_id: int, path: str = ""):
        self.job_id = job_id
        super().__init__(f"no log file for job {job_id} ({path})")


class ValidationError(IngestError):
    exit_code = 2

    def __init__(self, row: int, message: str):
        self.row = row
        super().__init__(f"row {row}: {message}")


class BadTimestamp(ValidationError):
    def __init__(self, row: int, field_name: str, token: str = ""):
        self.field = field_name
        super().__init__(row, f"bad timestamp in {field_name!r}: {token!r}")


class BadStatus(ValidationError):
    def __init__(self, row: int, token: str):
        self.token = token
        super().__init__(row, f"bad status {token!r} (expected one of {', '.join(STATUSES)})")


class BadValue(ValidationError):
    def __init__(self, row: int, field_name: str, token: str, reason: str = ""):
        self.field = field_name
        self.token = token
        msg = f"bad value in {field_name!r}: {token!r}"
        super().__init__(row, f"{msg} ({reason})" if reason else msg)


class DuplicateId(ValidationError):
    def __init__(self, row: int, job_id: int):
        self.job_id = job_id
        super().__init__(row, f"duplicate job id {job_id}")


class InvariantViolation(ValidationError):
    pass


# -- timestamps ---------------------------------------------------------------

_RFC3339 = re.compile(
    r"^(\d{4})-(\d{2})-(\d{2})[Tt ](\d{2}):(\d{2}):(\d{2})(\.\d+)?"
    r"(?:([Zz])|([+-])(\d{2}):(\d{2}))?$"
)


def parse_timestamp(token: str) -> datetime:
    """Parse an RFC 3339 timestamp into an aware UTC datetime.

    Offset-less input is taken as UTC. Fractions beyond microseconds are
    truncated. Raises ``ValueError`` on anything else.
    """
    m = _RFC3339.match(token.strip())
    if not m:
        raise ValueError(f"not an RFC 3339 timestamp: {token!r}")
    year, month, day, hour, minute, second = (int(g) for g in m.group(1, 2, 3, 4, 5, 6))
    frac = m.group(7)
    micro = int((frac[1:] + "000000")[:6]) if frac else 0
    if second == 60:  # leap second
        second = 59
    dt = datetime(year, month, day, hour, minute, second, micro, tzinfo=timezone.utc)
    if m.group(9):
        offset = timedelta(hours=int(m.group(10)), minutes=int(m.group(11)))
        if m.group(9) == "+":
            dt -= offset
        else:
            dt += offset
    return dt


def format_timestamp(dt: Optional[datetime]) -> str:
    if dt is None:
        return ""
    dt = dt.astimezone(timezone.utc)
    if dt.microsecond:
        return dt.strftime("%Y-%m-%dT%H:%M:%S.%fZ")
    return dt.strftime("%Y-%m-%dT%H:%M:%SZ")


def format_float(value: float) -> str:
    return repr(float(value))


def format_bool(value: bool) -> str:
    return "true" if value else "false"


# -- records ------------------------------------------------------------------


@dataclass(frozen=True)
class JobRecord:
    id: int
    name: str
    project_id: str
    commit_sha: str
    status: str
    created_at: Optional[datetime]
    started_at: Optional[datetime] = None
    finished_at: Optional[datetime] = None
    duration: float = 0.0
    logs: str = ""

    HEADER = JOB_HEADER

    def to_csv_row(self) -> list[str]:
        return [
            str(self.id),
            self.name,
            self.project_id,
            self.commit_sha,
            self.status,
            format_timestamp(self.created_at),
            format_timestamp(self.started_at),
            format_timestamp(self.finished_at),
            format_float(self.duration),
            self.logs,
        ]


@dataclass(frozen=True)
class LabeledJob(JobRecord):
    flaky: bool = False
    category: str = ""

    HEADER = LABELED_HEADER

    @classmethod
    def from_job(cls, job: JobRecord, flaky: bool, category: str) -> "LabeledJob":
        values = {f.name: getattr(job, f.name) for f in fields(JobRecord)}
        return cls(**values, flaky=flaky, category=category)

    def to_csv_row(self) -> list[str]:
        return super().to_csv_row() + [format_bool(self.flaky), self.category]


@dataclass(frozen=True)
class Dataset:
    """An ordered, immutable table of jobs as read from one file."""

    rows: tuple
    source_path: str = ""
    header: tuple = JOB_HEADER
    warnings: tuple = ()
    errors: tuple = ()

    def __len__(self) -> int:
        return len(self.rows)

    def __iter__(self):
        return iter(self.rows)

    @property
    def labeled(self) -> bool:
        return self.header == LABELED_HEADER

    def raise_for_errors(self) -> None:
        if self.errors:
            raise self.errors[0]


# -- generic table IO ---------------------------------------------------------


@contextmanager
def _open_out(path):
    if str(path) == "-":
        yield sys.stdout
        sys.stdout.flush()
        return
    with open(path, "w", encoding="utf-8", newline="") as fh:
        yield fh


def write_table(table, path, header: Optional[Sequence[str]] = None) -> None:
    """Write a Dataset or an iterable of records (anything with ``to_csv_row``).

    ``header`` is needed only for empty non-Dataset tables; otherwise it is
    taken from the record class. ``path`` may be ``"-"`` for stdout.
    """
    if isinstance(table, Dataset):
        header = table.header
        rows = table.rows
    else:
        rows = list(table)
        if header is None:
            if not rows:
                raise ValueError("header required for an empty table")
            header = type(rows[0]).HEADER
    if str(path) != "-":
        parent = Path(path).parent
        if not parent.is_dir():
            raise FileNotFoundError(f"output directory does not exist: {parent}")
    with _open_out(path) as fh:
        writer = csv.writer(fh, lineterminator="\r\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow(row.to_csv_row())


def read_table(
    path, required: Sequence[str], optional: Sequence[str] = ()
) -> tuple[list[str], Iterator[tuple[int, dict]]]:
    """Open a CSV and check its header.

    Returns the header and an iterator of ``(row_number, record)`` pairs;
    row numbers count data rows from 1. Unknown columns are ignored.
    """
    path = str(path)
    try:
        fh = open(path, encoding="utf-8-sig", errors="replace", newline="")
    except OSError as exc:
        raise InputError(f"cannot open {path}: {exc}") from exc
    reader = csv.reader(fh)
    try:
        header = next(reader)
    except StopIteration:
        fh.close()
        raise MissingColumn(required[0], path) from None
    except csv.Error as exc:
        fh.close()
        raise InputError(f"{path}: {exc}") from exc
    header = [h.strip() for h in header]
    for name in required:
        if name not in header:
            fh.close()
            raise MissingColumn(name, path)
    wanted = [c for c in list(required) + list(optional) if c in header]
    extra = [c for c in header if c not in wanted]
    if extra:
        logger.warning("%s: ignoring unknown columns %s", path, ", ".join(extra))
    index = {c: header.index(c) for c in wanted}

    def rows():
        with fh:
            try:
                for n, raw in enumerate(reader, start=1):
                    if not raw:
                        continue
                    raw = raw + [""] * (len(header) - len(raw))
                    yield n, {c: raw[i] for c, i in index.items()}
            except csv.Error as exc:
                raise InputError(f"{path}: {exc}") from exc

    return header, rows()


# -- job tables ---------------------------------------------------------------


def _opt_timestamp(rec: dict, name: str, row: int) -> Optional[datetime]:
    token = rec.get(name, "").strip()
    if not token:
        return None
    try:
        return parse_timestamp(token)
    except ValueError:
        raise BadTimestamp(row, name, token) from None


def _parse_bool(token: str, row: int, name: str) -> bool:
    t = token.strip().lower()
    if t in ("true", "1", "yes"):
        return True
    if t in ("false", "0", "no", ""):
        return False
    raise BadValue(row, name, token, "expected true/false")


def _job_from_record(rec: dict, row: int, logs: str, warnings: list) -> dict:
    token = rec["id"].strip()
    try:
        job_id = int(token)
    except ValueError:
        raise BadValue(row, "id", token, "expected integer") from None
    status = rec["status"].strip().lower()
    if status not in STATUSES:
        raise BadStatus(row, rec["status"])
    created = _opt_timestamp(rec, "created_at", row)
    started = _opt_timestamp(rec, "started_at", row)
    finished = _opt_timestamp(rec, "finished_at", row)
    if started is not None and finished is not None and finished < started:
        raise InvariantViolation(row, "finished_at precedes started_at")
    token = rec["duration"].strip()
    if token:
        try:
            duration = float(token)
        except ValueError:
            raise BadValue(row, "duration", token, "expected seconds") from None
        if not math.isfinite(duration) or duration < 0:
            raise BadValue(row, "duration", token, "must be finite and >= 0")
    elif started is not None and finished is not None:
        duration = (finished - started).total_seconds()
    else:
        duration = 0.0
        warnings.append(f"row {row}: job {job_id} has no duration; using 0")
    if created is None:
        warnings.append(f"row {row}: job {job_id} has no created_at")
    return dict(
        id=job_id,
        name=rec["name"],
        project_id=rec["project_id"],
        commit_sha=rec["commit_sha"],
        status=status,
        created_at=created,
        started_at=started,
        finished_at=finished,
        duration=duration,
        logs=logs,
    )


def _read_log(logs_dir: Path, job_id: int, max_bytes: Optional[int]) -> str:
    path = logs_dir / f"{job_id}.log"
    try:
        with open(path, "rb") as fh:
            data = fh.read() if max_bytes is None else fh.read(max_bytes)
    except FileNotFoundError:
        raise MissingLogFile(job_id, str(path)) from None
    return data.decode("utf-8", errors="replace")


def _parse(path, logs_dir, labeled: bool, max_log_bytes: Optional[int]) -> Dataset:
    extra = ("flaky", "category") if labeled else ()
    optional = ("logs",) if logs_dir is not None else ()
    required = JOB_COLUMNS + extra
    if logs_dir is None:
        try:
            _, rows = read_table(path, required + ("logs",))
        except MissingColumn as exc:
            if exc.name == "logs":
                raise MissingColumn("logs", f"{path} (and no logs directory given)") from None
            raise
    else:
        _, rows = read_table(path, required, optional)
        logs_dir = Path(logs_dir)
        if not logs_dir.is_dir():
            raise InputError(f"logs directory not found: {logs_dir}")

    cls = LabeledJob if labeled else JobRecord
    out, errors, warnings, seen = [], [], [], set()
    for n, rec in rows:
        try:
            token = rec["id"].strip()
            if logs_dir is not None and token.lstrip("-").isdigit():
                logs = _read_log(logs_dir, int(token), max_log_bytes)
            else:
                logs = rec.get("logs", "")
            values = _job_from_record(rec, n, logs, warnings)
            if values["id"] in seen:
                raise DuplicateId(n, values["id"])
            if labeled:
                values["flaky"] = _parse_bool(rec["flaky"], n, "flaky")
                values["category"] = rec["category"].strip()
                _check_label(values, n)
        except ValidationError as exc:
            errors.append(exc)
            continue
        seen.add(values["id"])
        out.append(cls(**values))
    for w in warnings[:20]:
        logger.warning("%s: %s", path, w)
    if len(warnings) > 20:
        logger.warning("%s: ... %d more warnings", path, len(warnings) - 20)
    return Dataset(
        rows=tuple(out),
        source_path=str(path),
        header=LABELED_HEADER if labeled else JOB_HEADER,
        warnings=tuple(warnings),
        errors=tuple(errors),
    )


def _check_label(values: dict, row: int) -> None:
    if values["flaky"]:
        if values["status"] != "failed":
            raise InvariantViolation(row, "flaky job must have status 'failed'")
        if not values["category"]:
            raise InvariantViolation(row, "flaky job must have a category")
        if values["created_at"] is None:
            raise InvariantViolation(row, "flaky job must have created_at")
    elif values["category"]:
        raise InvariantViolation(row, "non-flaky job must have an empty category")


def parse_jobs(path, logs_dir=None, max_log_bytes: Optional[int] = None) -> Dataset:
    """Read a jobs CSV.

    With ``logs_dir``, each job's log is read from ``<logs_dir>/<id>.log`` and
    any inline ``logs`` column is ignored. Row-level problems do not abort the
    read; they are collected on ``Dataset.errors`` so that every input row is
    accounted for. Header problems and missing log files raise immediately.
    """
    return _parse(path, logs_dir, labeled=False, max_log_bytes=max_log_bytes)


def parse_labeled(path, logs_dir=None, max_log_bytes: Optional[int] = None) -> Dataset:
    """Read a labeled CSV (jobs columns plus ``flaky,category``)."""
    return _parse(path, logs_dir, labeled=True, max_log_bytes=max_log_bytes)


def dumps_table(table, header: Optional[Sequence[str]] = None) -> str:
    """Serialize like :func:`write_table` but return the text."""
    if isinstance(table, Dataset):
        header, rows = table.header, table.rows
    else:
        rows = list(table)
        if header is None:
            if not rows:
                raise ValueError("header required for an empty table")
            header = type(rows[0]).HEADER
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\r\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow(row.to_csv_row())
    return buf.getvalue()
