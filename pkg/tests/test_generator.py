import json

import pytest

from flakerank.analyzer import CostModel, compute_rfm
from flakerank.generator import DEFAULT_MIX, CategoryMix, GeneratorSpec, generate_corpus, generate_jobs, manifest_path
from flakerank.ingest import JOB_HEADER, Dataset, parse_jobs
from flakerank.labeler import label_dataset
from flakerank.rulebook import load_rules


def test_zero_jobs(tmp_path):
    out = tmp_path / "jobs.csv"
    manifest = generate_corpus(GeneratorSpec(n_jobs=0), out)
    assert out.read_bytes() == (",".join(JOB_HEADER) + "\r\n").encode()
    assert manifest["n_jobs"] == 0 and manifest["flaky_ids"] == [] and manifest["category_counts"] == {}
    assert json.loads(manifest_path(out).read_text()) == manifest


def test_zero_flaky_rate():
    jobs, manifest = generate_jobs(GeneratorSpec(n_jobs=500, flaky_rate=0.0, seed=1))
    assert manifest["n_flaky"] == 0
    labeled = label_dataset(Dataset(rows=tuple(jobs)), load_rules())
    assert not any(r.flaky for r in labeled.rows)


@pytest.mark.parametrize("kw", [{"n_jobs": -1}, {"n_jobs": 5, "flaky_rate": 0.6}, {"n_jobs": 5, "span_days": 0}])
def test_invalid_generator_settings(kw):
    with pytest.raises(ValueError):
        GeneratorSpec(**kw)


def test_weights_must_sum_to_one():
    with pytest.raises(ValueError):
        GeneratorSpec(n_jobs=10, mix=(CategoryMix("a", 0.5, ("x",)), CategoryMix("b", 0.4, ("y",))))


def test_same_seed_same_corpus(tmp_path):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    generate_corpus(GeneratorSpec(n_jobs=300, seed=4), a)
    generate_corpus(GeneratorSpec(n_jobs=300, seed=4), b)
    assert a.read_bytes() == b.read_bytes()
    assert manifest_path(a).read_bytes() == manifest_path(b).read_bytes()


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_labeler_recovers_manifest(tmp_path, seed):
    out = tmp_path / "jobs.csv"
    manifest = generate_corpus(GeneratorSpec(n_jobs=2000, seed=seed, flaky_rate=0.1), out)
    labeled = label_dataset(parse_jobs(out), load_rules())
    assert sorted(r.id for r in labeled.rows if r.flaky) == manifest["flaky_ids"]
    counts = {}
    for r in labeled.rows:
        if r.flaky:
            counts[r.category] = counts.get(r.category, 0) + 1
    assert counts == manifest["category_counts"]
    rfm = compute_rfm(labeled, CostModel())
    for row in rfm:
        assert row.monetary == pytest.approx(manifest["category_duration_seconds"][row.category] / 3600, rel=1e-12)


def test_ids_are_in_time_order():
    jobs, _ = generate_jobs(GeneratorSpec(n_jobs=400, seed=9))
    assert [j.id for j in jobs] == list(range(1, 401))
    assert all(a.created_at <= b.created_at for a, b in zip(jobs, jobs[1:]))


def test_mix_covers_builtin_categories():
    assert [m.name for m in DEFAULT_MIX] == load_rules().categories
