import random
from datetime import datetime, timedelta, timezone

import pytest
from hypothesis import given, settings, strategies as st

from flakerank.ingest import (
    JOB_HEADER,
    LABELED_HEADER,
    BadStatus,
    BadTimestamp,
    Dataset,
    DuplicateId,
    InvariantViolation,
    JobRecord,
    LabeledJob,
    MissingColumn,
    MissingLogFile,
    dumps_table,
    format_timestamp,
    parse_jobs,
    parse_labeled,
    parse_timestamp,
    write_table,
)

HEADER = ",".join(JOB_HEADER)


def write(tmp_path, text, name="jobs.csv"):
    path = tmp_path / name
    path.write_text(text, encoding="utf-8")
    return path


def test_header_only_file_gives_empty_dataset(tmp_path):
    ds = parse_jobs(write(tmp_path, HEADER + "\n"))
    assert len(ds) == 0
    assert ds.errors == ()


def test_duration_backfilled_from_timestamps(tmp_path):
    path = write(
        tmp_path,
        HEADER + "\n1,build,p,abc,failed,2024-01-01T00:00:00Z,2024-01-01T00:00:00Z,2024-01-01T01:00:00Z,,log\n",
    )
    (job,) = parse_jobs(path).rows
    assert job.duration == 3600.0


def test_missing_duration_without_timestamps_is_zero_with_warning(tmp_path):
    path = write(tmp_path, HEADER + "\n1,build,p,abc,failed,2024-01-01T00:00:00Z,,,,log\n")
    ds = parse_jobs(path)
    assert ds.rows[0].duration == 0.0
    assert len(ds.warnings) == 1


def test_missing_column(tmp_path):
    path = write(tmp_path, "id,name,project_id,commit_sha,created_at,started_at,finished_at,duration,logs\n")
    with pytest.raises(MissingColumn) as exc:
        parse_jobs(path)
    assert exc.value.name == "status"


def test_logs_column_required_without_logs_dir(tmp_path):
    path = write(tmp_path, ",".join(JOB_HEADER[:-1]) + "\n")
    with pytest.raises(MissingColumn):
        parse_jobs(path)


def test_row_errors_are_positioned_and_counted(tmp_path):
    rows = [
        "1,b,p,a,failed,2024-01-01T00:00:00Z,,,5,",
        "2,b,p,a,broken,2024-01-01T00:00:00Z,,,5,",
        "3,b,p,a,failed,yesterday,,,5,",
        "1,b,p,a,success,2024-01-01T00:00:00Z,,,5,",
        "4,b,p,a,success,2024-01-01T00:00:00Z,2024-01-01T02:00:00Z,2024-01-01T01:00:00Z,,",
        "5,b,p,a,skipped,2024-01-01T00:00:00Z,,,5,",
    ]
    ds = parse_jobs(write(tmp_path, HEADER + "\n" + "\n".join(rows) + "\n"))
    assert [r.id for r in ds.rows] == [1, 5]
    kinds = [(type(e), e.row) for e in ds.errors]
    assert kinds == [(BadStatus, 2), (BadTimestamp, 3), (DuplicateId, 4), (InvariantViolation, 5)]
    assert len(ds.rows) + len(ds.errors) == len(rows)
    with pytest.raises(BadStatus):
        ds.raise_for_errors()


def test_logs_dir_sidecar_wins_over_inline(tmp_path):
    logs = tmp_path / "logs"
    logs.mkdir()
    (logs / "7.log").write_bytes("from file \xff".encode("latin-1"))
    path = write(tmp_path, HEADER + "\n7,b,p,a,failed,2024-01-01T00:00:00Z,,,1,inline\n")
    (job,) = parse_jobs(path, logs_dir=logs).rows
    assert job.logs == "from file �"


def test_logs_dir_missing_file(tmp_path):
    logs = tmp_path / "logs"
    logs.mkdir()
    path = write(tmp_path, ",".join(JOB_HEADER[:-1]) + "\n8,b,p,a,failed,2024-01-01T00:00:00Z,,,1\n")
    with pytest.raises(MissingLogFile):
        parse_jobs(path, logs_dir=logs)


@pytest.mark.parametrize(
    "token, expected",
    [
        ("2024-01-01T00:00:00Z", datetime(2024, 1, 1, tzinfo=timezone.utc)),
        ("2024-01-01T02:30:00+02:30", datetime(2024, 1, 1, tzinfo=timezone.utc)),
        ("2023-12-31T19:00:00-05:00", datetime(2024, 1, 1, tzinfo=timezone.utc)),
        ("2024-01-01 00:00:00.5z", datetime(2024, 1, 1, 0, 0, 0, 500000, tzinfo=timezone.utc)),
        ("2024-01-01T00:00:00", datetime(2024, 1, 1, tzinfo=timezone.utc)),
    ],
)
def test_parse_timestamp_normalizes_to_utc(token, expected):
    assert parse_timestamp(token) == expected


@given(
    st.datetimes(min_value=datetime(1971, 1, 1), max_value=datetime(2200, 1, 1)),
    st.integers(min_value=-23 * 60 - 59, max_value=23 * 60 + 59),
)
def test_offset_input_equals_utc_normalization(naive, offset_minutes):
    tz = timezone(timedelta(minutes=offset_minutes))
    local = naive.replace(tzinfo=tz)
    sign = "+" if offset_minutes >= 0 else "-"
    hh, mm = divmod(abs(offset_minutes), 60)
    token = local.strftime("%Y-%m-%dT%H:%M:%S.%f") + f"{sign}{hh:02d}:{mm:02d}"
    parsed = parse_timestamp(token)
    assert parsed == local
    assert parse_timestamp(format_timestamp(parsed)) == parsed


def test_write_empty_table_is_header_only(tmp_path):
    path = tmp_path / "out.csv"
    write_table(Dataset(rows=(), header=LABELED_HEADER), path)
    assert path.read_bytes() == (",".join(LABELED_HEADER) + "\r\n").encode()


def test_labeled_row_ends_with_flag_and_category(tmp_path):
    job = LabeledJob(1, "b", "p", "a", "failed", parse_timestamp("2024-01-01T00:00:00Z"), flaky=True, category="oom")
    text = dumps_table([job])
    assert text.splitlines()[1].endswith(",true,oom")


def test_write_to_missing_directory_fails(tmp_path):
    with pytest.raises(FileNotFoundError):
        write_table(Dataset(rows=()), tmp_path / "nope" / "x.csv")


_text = st.text(alphabet=st.characters(blacklist_categories=("Cs",), blacklist_characters="\x00"), max_size=40)


@st.composite
def job_tables(draw, labeled=False):
    n = draw(st.integers(0, 12))
    ids = draw(st.lists(st.integers(0, 10**9), min_size=n, max_size=n, unique=True))
    rows = []
    for job_id in ids:
        created = draw(st.one_of(st.none(), st.datetimes(min_value=datetime(2000, 1, 1), max_value=datetime(2100, 1, 1))))
        created = created.replace(tzinfo=timezone.utc) if created else None
        started = created
        finished = None
        if created is not None and draw(st.booleans()):
            finished = created + timedelta(seconds=draw(st.integers(0, 10**6)))
        status = draw(st.sampled_from(["success", "failed", "canceled", "skipped"]))
        values = dict(
            id=job_id,
            name=draw(_text),
            project_id=draw(_text),
            commit_sha=draw(_text),
            status=status,
            created_at=created,
            started_at=started,
            finished_at=finished,
            duration=draw(st.floats(min_value=0, max_value=1e9, allow_nan=False)),
            logs=draw(_text),
        )
        if labeled:
            flaky = status == "failed" and created is not None and draw(st.booleans())
            values.update(flaky=flaky, category=draw(st.from_regex(r"[a-z_]{1,10}", fullmatch=True)) if flaky else "")
            rows.append(LabeledJob(**values))
        else:
            rows.append(JobRecord(**values))
    return Dataset(rows=tuple(rows), header=LABELED_HEADER if labeled else JOB_HEADER)


@settings(max_examples=60, deadline=None)
@given(job_tables())
def test_round_trip_jobs(tmp_path_factory, ds):
    tmp = tmp_path_factory.mktemp("rt")
    first = tmp / "a.csv"
    write_table(ds, first)
    parsed = parse_jobs(first)
    assert parsed.errors == ()
    assert parsed.rows == ds.rows
    second = tmp / "b.csv"
    write_table(parsed, second)
    assert first.read_bytes() == second.read_bytes()


@settings(max_examples=60, deadline=None)
@given(job_tables(labeled=True))
def test_round_trip_labeled(tmp_path_factory, ds):
    tmp = tmp_path_factory.mktemp("rt")
    first = tmp / "a.csv"
    write_table(ds, first)
    parsed = parse_labeled(first)
    assert parsed.errors == ()
    assert parsed.rows == ds.rows
    second = tmp / "b.csv"
    write_table(parsed, second)
    assert first.read_bytes() == second.read_bytes()


def test_parse_is_total_on_random_dirty_files(tmp_path):
    rng = random.Random(3)
    good = "{id},b,p,a,{status},{ts},,,{dur},x"
    for trial in range(50):
        lines = [HEADER]
        for i in range(rng.randint(0, 30)):
            lines.append(
                good.format(
                    id=rng.choice([i, i, i, 0, "x"]),
                    status=rng.choice(["success", "failed", "FAILED", "ok"]),
                    ts=rng.choice(["2024-01-01T00:00:00Z", "", "nope"]),
                    dur=rng.choice(["1", "", "-1", "abc"]),
                )
            )
        path = write(tmp_path, "\n".join(lines) + "\n", f"d{trial}.csv")
        ds = parse_jobs(path)
        assert len(ds.rows) + len(ds.errors) == len(lines) - 1
