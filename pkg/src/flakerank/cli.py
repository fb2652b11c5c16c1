"""Command line entry point: ``flakerank {label,analyze,rank,run,rules}``.

Option values resolve as command-line flag, then ``FLAKERANK_<NAME>``
environment variable, then built-in default. Tables go to files (or stdout
with ``-o -``); diagnostics always go to stderr.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from dataclasses import dataclass
from datetime import datetime
from pathlib import Path
from typing import Optional

from . import __version__
from .analyzer import (
    EVOLUTION_HEADER,
    RFM_HEADER,
    CostModel,
    compute_evolution,
    compute_rfm,
    read_evolution,
    read_rfm,
)
from .clustering import DEFAULT_SEED, ClusteringError
from .generator import GeneratorSpec, generate_corpus, manifest_path
from .ingest import IngestError, parse_jobs, parse_labeled, parse_timestamp, write_table
from .labeler import label_dataset
from .ranker import RANKED_HEADER, dump_model, rank_with_model, render_report
from .rulebook import RuleError, RuleParseError, load_rules

logger = logging.getLogger("flakerank")

ENV_PREFIX = "FLAKERANK_"
OUTPUT_FILES = ("labeled.csv", "rfm.csv", "evolution.csv", "ranked.csv", "report.md")


class UsageError(Exception):
    pass


@dataclass(frozen=True)
class RunConfig:
    input: Path
    output_dir: Path
    rules: Optional[Path] = None
    logs_dir: Optional[Path] = None
    workers: int = 1
    max_log_bytes: Optional[int] = None
    cost_rate: float = 1.0
    diagnosis_overhead: float = 0.0
    reference_date: Optional[datetime] = None
    k: Optional[int] = None
    seed: int = DEFAULT_SEED
    dump_model: Optional[Path] = None

    def __post_init__(self):
        if self.workers < 1:
            raise UsageError("worker count must be >= 1")
        if self.k is not None and self.k < 1:
            raise UsageError("k must be >= 1")
        if not -(2**63) <= self.seed < 2**64:
            raise UsageError("seed must fit in 64 bits")

    @property
    def cost_model(self) -> CostModel:
        return CostModel(self.cost_rate, self.diagnosis_overhead, self.reference_date)


# -- argument helpers ---------------------------------------------------------


def _positive_int(token: str) -> int:
    value = int(token)
    if value < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {token}")
    return value


def _non_negative_float(token: str) -> float:
    value = float(token)
    if not value >= 0:
        raise argparse.ArgumentTypeError(f"expected a non-negative number, got {token}")
    return value


def _timestamp(token: str) -> datetime:
    try:
        return parse_timestamp(token)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _env(name: str, convert=str, default=None):
    token = os.environ.get(ENV_PREFIX + name)
    if token is None or token == "":
        return default
    try:
        return convert(token)
    except (ValueError, argparse.ArgumentTypeError) as exc:
        raise UsageError(f"bad value in ${ENV_PREFIX}{name}: {token!r} ({exc})") from None


def _add_label_opts(p):
    p.add_argument("--rules", type=Path, default=_env("RULES", Path), help="rule file (default: builtin starter rules)")
    p.add_argument("--logs-dir", type=Path, default=_env("LOGS_DIR", Path), help="read logs from DIR/<id>.log")
    p.add_argument("--jobs", dest="workers", type=_positive_int, default=_env("JOBS", _positive_int, 1),
                   help="worker processes for log matching (default 1)")
    p.add_argument("--max-log-bytes", type=_positive_int, default=_env("MAX_LOG_BYTES", _positive_int),
                   help="only scan the first N bytes of each log")


def _add_analyze_opts(p):
    p.add_argument("--cost-rate", type=_non_negative_float, default=_env("COST_RATE", _non_negative_float, 1.0),
                   help="cost per compute hour (default 1.0)")
    p.add_argument("--diagnosis-overhead", type=_non_negative_float,
                   default=_env("DIAGNOSIS_OVERHEAD", _non_negative_float, 0.0),
                   help="flat cost per flaky failure (default 0)")
    p.add_argument("--reference-date", type=_timestamp, default=_env("REFERENCE_DATE", _timestamp),
                   help="RFC 3339 date recency is measured from (default: latest finished_at)")


def _add_rank_opts(p):
    p.add_argument("--k", type=_positive_int, default=_env("K", _positive_int), help="fixed cluster count (default: by silhouette)")
    p.add_argument("--seed", type=int, default=_env("SEED", int, DEFAULT_SEED), help=f"clustering seed (default {DEFAULT_SEED})")
    p.add_argument("--dump-model", type=Path, help=argparse.SUPPRESS)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="flakerank",
        description="Identify flaky CI job failures, categorize them and prioritize the categories.",
    )
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="count", default=0, help="more diagnostics on stderr")
    parser.add_argument("-q", "--quiet", action="store_true", help="only report errors")
    sub = parser.add_subparsers(dest="command", metavar="{label,analyze,rank,run,rules}")
    sub.required = True

    p = sub.add_parser("label", help="flag flaky failures and assign categories")
    p.add_argument("-i", "--input", required=True, type=Path, help="jobs CSV")
    p.add_argument("-o", "--output", required=True, help="labeled CSV, or - for stdout")
    _add_label_opts(p)

    p = sub.add_parser("analyze", help="compute per-category RFM values")
    p.add_argument("-i", "--input", required=True, type=Path, help="labeled CSV")
    p.add_argument("-o", "--output", required=True, help="RFM CSV, or - for stdout")
    p.add_argument("--evolution", type=Path, help="also write monthly counts to this CSV")
    _add_analyze_opts(p)

    p = sub.add_parser("rank", help="score, cluster and rank categories")
    p.add_argument("-i", "--input", required=True, type=Path, help="RFM CSV")
    p.add_argument("-o", "--output", required=True, help="ranked CSV, or - for stdout")
    p.add_argument("--report", type=Path, help="write a markdown report")
    p.add_argument("--evolution", type=Path, help="evolution CSV to include in the report")
    _add_rank_opts(p)

    p = sub.add_parser("run", help="label => analyze => rank into an output directory")
    p.add_argument("-i", "--input", required=True, type=Path, help="jobs CSV")
    p.add_argument("-o", "--output", required=True, type=Path, help="output directory")
    _add_label_opts(p)
    _add_analyze_opts(p)
    _add_rank_opts(p)

    p = sub.add_parser("rules", help="show the effective rulebook")
    p.add_argument("--rules", type=Path, default=_env("RULES", Path), help="rule file (default: builtin)")
    p.add_argument("--list", action="store_true", help="list categories and pattern counts (default)")
    p.add_argument("--show", action="store_true", help="print the rulebook in rule-file format")

    p = sub.add_parser("gen")  # hidden: no help entry
    p.add_argument("-o", "--output", required=True, type=Path, help="jobs CSV to write")
    p.add_argument("-n", "--n-jobs", type=int, default=1000)
    p.add_argument("--flaky-rate", type=float, default=0.05)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--span-days", type=int, default=365)
    return parser


# -- commands -----------------------------------------------------------------


def _load_jobs(path, logs_dir, max_log_bytes):
    jobs = parse_jobs(path, logs_dir=logs_dir, max_log_bytes=max_log_bytes)
    _report_row_errors(jobs)
    return jobs


def _report_row_errors(dataset):
    if dataset.errors:
        for err in dataset.errors[:20]:
            logger.error("%s: %s", dataset.source_path, err)
        if len(dataset.errors) > 20:
            logger.error("... %d more invalid rows", len(dataset.errors) - 20)
        dataset.raise_for_errors()


def cmd_label(args) -> int:
    rb = load_rules(args.rules)
    jobs = _load_jobs(args.input, args.logs_dir, args.max_log_bytes)
    labeled = label_dataset(jobs, rb, workers=args.workers, max_log_bytes=args.max_log_bytes)
    write_table(labeled, args.output)
    return 0


def cmd_analyze(args) -> int:
    labeled = parse_labeled(args.input)
    _report_row_errors(labeled)
    cm = CostModel(args.cost_rate, args.diagnosis_overhead, args.reference_date)
    write_table(compute_rfm(labeled, cm), args.output, header=RFM_HEADER)
    if args.evolution:
        write_table(compute_evolution(labeled), args.evolution, header=EVOLUTION_HEADER)
    return 0


def _write_rank_outputs(rfm, out, k, seed, report=None, evolution=None, model_path=None):
    ranked, model = rank_with_model(rfm, k=k, seed=seed)
    write_table(ranked, out, header=RANKED_HEADER)
    if model_path:
        dump_model(model, model_path)
    if report:
        Path(report).write_text(render_report(ranked, evolution), encoding="utf-8")
    if ranked:
        top = ranked[0]
        logger.info("top priority: %s (%s %s)", top.category, top.pattern, top.label)
    return ranked


def cmd_rank(args) -> int:
    rfm = read_rfm(args.input)
    evolution = read_evolution(args.evolution) if args.evolution else None
    _write_rank_outputs(rfm, args.output, args.k, args.seed, args.report, evolution, args.dump_model)
    return 0


def run_pipeline(cfg: RunConfig) -> int:
    """Run label, analyze and rank, writing every stage output into ``cfg.output_dir``."""
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    try:
        rb = load_rules(cfg.rules)
        jobs = _load_jobs(cfg.input, cfg.logs_dir, cfg.max_log_bytes)
        labeled = label_dataset(jobs, rb, workers=cfg.workers, max_log_bytes=cfg.max_log_bytes)
        write_table(labeled, out / "labeled.csv")
        written.append("labeled.csv")

        rfm = compute_rfm(labeled, cfg.cost_model)
        evolution = compute_evolution(labeled)
        write_table(rfm, out / "rfm.csv", header=RFM_HEADER)
        write_table(evolution, out / "evolution.csv", header=EVOLUTION_HEADER)
        written += ["rfm.csv", "evolution.csv"]

        _write_rank_outputs(rfm, out / "ranked.csv", cfg.k, cfg.seed, out / "report.md", evolution, cfg.dump_model)
    except Exception:
        if written:
            logger.warning("pipeline stopped; kept completed outputs in %s: %s", out, ", ".join(written))
        raise
    return 0


def cmd_run(args) -> int:
    cfg = RunConfig(
        input=args.input,
        output_dir=args.output,
        rules=args.rules,
        logs_dir=args.logs_dir,
        workers=args.workers,
        max_log_bytes=args.max_log_bytes,
        cost_rate=args.cost_rate,
        diagnosis_overhead=args.diagnosis_overhead,
        reference_date=args.reference_date,
        k=args.k,
        seed=args.seed,
        dump_model=args.dump_model,
    )
    return run_pipeline(cfg)


def cmd_rules(args) -> int:
    rb = load_rules(args.rules)
    if args.show:
        sys.stdout.write(rb.dumps())
        return 0
    width = max(len(c) for c in rb.categories)
    print(f"# rulebook: {rb.source}")
    for rule in rb.rules:
        print(f"{rule.category:<{width}}  {len(rule.patterns)}")
    return 0


def cmd_gen(args) -> int:
    spec = GeneratorSpec(n_jobs=args.n_jobs, flaky_rate=args.flaky_rate, seed=args.seed, span_days=args.span_days)
    manifest = generate_corpus(spec, args.output)
    logger.info("wrote %d jobs (%d flaky) to %s; manifest %s",
                manifest["n_jobs"], manifest["n_flaky"], args.output, manifest_path(args.output))
    return 0


COMMANDS = {
    "label": cmd_label,
    "analyze": cmd_analyze,
    "rank": cmd_rank,
    "run": cmd_run,
    "rules": cmd_rules,
    "gen": cmd_gen,
}


def _configure_logging(verbose: int, quiet: bool) -> None:
    level_name = os.environ.get(ENV_PREFIX + "LOG_LEVEL", "")
    if quiet:
        level = logging.ERROR
    elif verbose:
        level = logging.DEBUG
    else:
        level = getattr(logging, level_name.upper(), logging.INFO) if level_name else logging.INFO
    root = logging.getLogger("flakerank")
    root.handlers[:] = []
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter("flakerank: %(levelname)s: %(message)s"))
    root.addHandler(handler)
    root.setLevel(level)
    root.propagate = False


def main(argv=None) -> int:
    try:
        parser = build_parser()
    except UsageError as exc:
        print(f"flakerank: error: {exc}", file=sys.stderr)
        return 2
    args = parser.parse_args(argv)
    _configure_logging(args.verbose, args.quiet)
    try:
        return COMMANDS[args.command](args)
    except IngestError as exc:
        logger.error("%s", exc)
        return exc.exit_code
    except RuleParseError as exc:
        logger.error("%s", exc)
        return 1
    except (RuleError, ClusteringError, UsageError) as exc:
        logger.error("%s", exc)
        return 2
    except OSError as exc:
        logger.error("%s", exc)
        return 1


if __name__ == "__main__":
    sys.exit(main())
