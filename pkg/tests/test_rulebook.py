import random

import pytest
from hypothesis import given, strategies as st

from flakerank.generator import DEFAULT_MIX, NOISE, GENUINE_FAILURES
from flakerank.rulebook import (
    BadPattern,
    DuplicateCategory,
    Rule,
    Rulebook,
    RuleParseError,
    load_rules,
    match_category,
    parse_rules,
    strip_ansi,
)

from oracles import first_match_pairwise

BUILTIN_ORDER = [
    "job_timeout",
    "runner_failure",
    "connection_error",
    "out_of_memory",
    "docker_pull_error",
    "git_checkout_error",
    "dependency_install_error",
    "disk_quota_exceeded",
]


def rb(*rules, ci=True):
    return Rulebook(tuple(Rule(cat, tuple(pats), case_insensitive=ci) for cat, pats in rules))


def test_builtin_rulebook():
    book = load_rules()
    assert book.categories == BUILTIN_ORDER
    assert book.rules[0].category == "job_timeout"
    assert all(2 <= len(r.patterns) <= 4 for r in book.rules)
    assert book.source == "builtin"


def test_builtin_dumps_round_trips():
    book = load_rules()
    again = parse_rules(book.dumps())
    assert [(r.category, r.patterns, r.case_insensitive, r.description) for r in again.rules] == [
        (r.category, r.patterns, r.case_insensitive, r.description) for r in book.rules
    ]


def test_load_rule_file(tmp_path):
    path = tmp_path / "rules.txt"
    path.write_text(
        "# local rules\n"
        "[oom]\n"
        "description = memory\n"
        "pattern = out of memory\n"
        "pattern = oom-?killed\n"
        "\n"
        "[flaky-net]\n"
        "pattern = ECONNRESET\n"
        "case_insensitive = false\n"
    )
    book = load_rules(path)
    assert book.categories == ["oom", "flaky-net"]
    assert book.rules[1].case_insensitive is False
    assert match_category(book, "econnreset") is None
    assert match_category(book, "read ECONNRESET") == "flaky-net"
    assert match_category(book, "OOM-Killed") == "oom"


def test_duplicate_category(tmp_path):
    path = tmp_path / "rules.txt"
    path.write_text("[oom]\npattern = a\n[oom]\npattern = b\n")
    with pytest.raises(DuplicateCategory) as exc:
        load_rules(path)
    assert exc.value.name == "oom"


@pytest.mark.parametrize(
    "pattern",
    [r"(?P<x>a)\1", r"(a)\1", r"(?P<x>a)(?P=x)", r"foo(?=bar)", r"foo(?!bar)", r"(?<=x)y", r"(?<!x)y", r"(a)?(?(1)b|c)"],
)
def test_dialect_rejects_backreferences_and_lookaround(pattern):
    with pytest.raises(BadPattern):
        parse_rules(f"[c]\npattern = {pattern}\n")


def test_invalid_regex_is_bad_pattern():
    with pytest.raises(BadPattern) as exc:
        parse_rules("[c]\npattern = (unclosed\n")
    assert exc.value.category == "c"


@pytest.mark.parametrize(
    "text, line",
    [
        ("pattern = x\n", 1),
        ("[c]\npattern\n", 2),
        ("[c]\nbogus = 1\n", 2),
        ("[Bad Name]\npattern = x\n", 1),
        ("[c]\ncase_insensitive = maybe\n", 2),
        ("[c]\ndescription = nothing to match\n", 1),
        ("# only comments\n", 0),
    ],
)
def test_rule_parse_errors(text, line):
    with pytest.raises(RuleParseError) as exc:
        parse_rules(text)
    assert exc.value.line == line


def test_empty_log_has_no_category():
    assert match_category(load_rules(), "") is None


def test_first_rule_wins():
    book = rb(("r1", ["connection timed out"]), ("r2", ["timed out"]))
    assert match_category(book, "error: connection timed out") == "r1"
    assert match_category(book, "step timed out") == "r2"


def test_ansi_codes_do_not_split_literals():
    book = rb(("oom", ["out of memory"]))
    assert match_category(book, "fatal: out \x1b[1;31mof\x1b[0m memory") == "oom"
    assert match_category(book, "\x1b]0;title\x07out of memory") == "oom"


def test_dot_does_not_cross_newlines_and_anchors_are_per_line():
    book = rb(("a", ["start.*end"]), ("b", ["^fatal:"]))
    assert match_category(book, "start\nend") is None
    assert match_category(book, "ok\nfatal: boom") == "b"


def test_generator_markers_hit_their_builtin_rule():
    book = load_rules()
    for mix in DEFAULT_MIX:
        for marker in mix.markers:
            assert match_category(book, marker) == mix.name, marker


def test_generator_background_lines_match_nothing():
    book = load_rules()
    for line in NOISE + GENUINE_FAILURES:
        assert match_category(book, line) is None, line


@given(st.text(alphabet=st.sampled_from(list("ab[31m;0\x1b\x9b]\x07\\ \n")), max_size=60))
def test_strip_ansi_idempotent(text):
    once = strip_ansi(text)
    assert strip_ansi(once) == once
    assert "\x1b" not in once


@given(st.text(alphabet=st.sampled_from(list("ab[31m;0\x1b]\x07 timedout")), max_size=60))
def test_match_ignores_ansi(text):
    book = rb(("x", ["time"]), ("y", [r"a\[3"]), ("z", ["b"]))
    assert match_category(book, text) == match_category(book, strip_ansi(text))


# -- randomized rulebooks against the pairwise oracle --------------------------

WORDS = ["disk", "full", "timeout", "timed out", "oom", "killed", "pull", "error", "fatal", "net"]


def random_pattern(rng):
    kind = rng.randrange(4)
    w = rng.choice(WORDS)
    if kind == 0:
        return w
    if kind == 1:
        return f"{w}|{rng.choice(WORDS)}"
    if kind == 2:
        return f"^{w}"
    return f"{w}\\s+\\w+"


def random_rulebook(rng):
    rules = []
    for i in range(rng.randint(1, 6)):
        rules.append((f"c{i}", [random_pattern(rng) for _ in range(rng.randint(1, 3))], rng.random() < 0.7))
    return rules


def random_log(rng):
    lines = []
    for _ in range(rng.randint(0, 5)):
        words = [rng.choice(WORDS + ["ok", "step", "DISK", "Fatal"]) for _ in range(rng.randint(1, 4))]
        if rng.random() < 0.2:
            words.insert(1, "\x1b[31m")
        lines.append(" ".join(words))
    return "\n".join(lines)


def test_match_equals_pairwise_oracle():
    rng = random.Random(11)
    for _ in range(100):
        rules = random_rulebook(rng)
        book = Rulebook(tuple(Rule(c, tuple(p), case_insensitive=ci) for c, p, ci in rules))
        for _ in range(10):
            log = random_log(rng)
            assert match_category(book, log) == first_match_pairwise(rules, log)


def test_permuting_patterns_within_rule_is_harmless():
    rng = random.Random(12)
    for _ in range(200):
        rules = random_rulebook(rng)
        shuffled = [(c, rng.sample(p, len(p)), ci) for c, p, ci in rules]
        a = Rulebook(tuple(Rule(c, tuple(p), case_insensitive=ci) for c, p, ci in rules))
        b = Rulebook(tuple(Rule(c, tuple(p), case_insensitive=ci) for c, p, ci in shuffled))
        log = random_log(rng)
        assert match_category(a, log) == match_category(b, log)


def test_appending_a_rule_keeps_existing_matches():
    rng = random.Random(13)
    for _ in range(200):
        rules = random_rulebook(rng)
        a = Rulebook(tuple(Rule(c, tuple(p), case_insensitive=ci) for c, p, ci in rules))
        b = Rulebook(a.rules + (Rule("extra", (random_pattern(rng),)),))
        log = random_log(rng)
        before = match_category(a, log)
        if before is not None:
            assert match_category(b, log) == before
