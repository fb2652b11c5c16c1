"""Ordered regex rules that map a job log to a failure category.

Rule files are line oriented::

    # comment
    [out_of_memory]
    description = Process killed for exceeding its memory limit
    pattern = out of memory
    pattern = \\boom[- ]?kill(ed|er)?\\b
    case_insensitive = true

Rules are tried in file order and patterns in listed order; the first rule
with any matching pattern wins. Patterns are searched anywhere in the
ANSI-stripped log, with ``^``/``$`` anchoring at line boundaries and ``.``
never crossing a newline.
"""

from __future__ import annotations

import re
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

if sys.version_info >= (3, 11):
    from re import _constants as _sre_constants
    from re import _parser as _sre_parse
else:  # pragma: no cover - exercised on 3.10 only
    import sre_constants as _sre_constants
    import sre_parse as _sre_parse

__all__ = [
    "Rule",
    "Rulebook",
    "RuleError",
    "RuleParseError",
    "BadPattern",
    "DuplicateCategory",
    "strip_ansi",
    "load_rules",
    "parse_rules",
    "match_category",
    "BUILTIN_RULES",
]

_CATEGORY_RE = re.compile(r"^[a-z0-9_\-]+$")

# OSC (BEL or ST terminated), CSI, other two-byte escapes, then any stray
# ESC/CSI byte so that the output never contains an introducer.
_ANSI_RE = re.compile(
    r"\x1b\][^\x07\x1b]*(?:\x07|\x1b\\)"
    r"|(?:\x1b\[|\x9b)[0-?]*[ -/]*[@-~]"
    r"|\x1b[@-Z\\-_]"
    r"|[\x1b\x9b]"
)


def strip_ansi(text: str) -> str:
    """Remove ANSI CSI/OSC escape sequences. Idempotent."""
    if "\x1b" not in text and "\x9b" not in text:
        return text
    return _ANSI_RE.sub("", text)


class RuleError(Exception):
    pass


class RuleParseError(RuleError):
    def __init__(self, line: int, message: str, source: str = ""):
        self.line = line
        where = f"{source}:{line}" if source else f"line {line}"
        super().__init__(f"{where}: {message}")


class BadPattern(RuleError):
    def __init__(self, category: str, pattern: str, reason: str):
        self.category = category
        self.pattern = pattern
        self.reason = reason
        super().__init__(f"[{category}] bad pattern {pattern!r}: {reason}")


class DuplicateCategory(RuleError):
    def __init__(self, name: str):
        self.name = name
        super().__init__(f"duplicate category {name!r}")


_FORBIDDEN = {
    _sre_constants.GROUPREF: "backreferences are not supported",
    _sre_constants.GROUPREF_EXISTS: "conditional groups are not supported",
    _sre_constants.ASSERT: "lookaround is not supported",
    _sre_constants.ASSERT_NOT: "lookaround is not supported",
}


def _dialect_violation(node) -> Optional[str]:
    if isinstance(node, _sre_parse.SubPattern):
        for op, av in node.data:
            if op in _FORBIDDEN:
                return _FORBIDDEN[op]
            found = _dialect_violation(av)
            if found:
                return found
    elif isinstance(node, (list, tuple)):
        for item in node:
            found = _dialect_violation(item)
            if found:
                return found
    return None


def compile_pattern(category: str, pattern: str, case_insensitive: bool) -> re.Pattern:
    """Compile one rule pattern, rejecting constructs outside the dialect."""
    flags = re.MULTILINE | (re.IGNORECASE if case_insensitive else 0)
    try:
        compiled = re.compile(pattern, flags)
        tree = _sre_parse.parse(pattern, flags)
    except re.error as exc:
        raise BadPattern(category, pattern, str(exc)) from None
    if re.search(r"\\[gG]<", pattern):
        raise BadPattern(category, pattern, "backreferences are not supported")
    reason = _dialect_violation(tree)
    if reason:
        raise BadPattern(category, pattern, reason)
    return compiled


@dataclass(frozen=True)
class Rule:
    category: str
    patterns: tuple[str, ...]
    description: str = ""
    case_insensitive: bool = True
    compiled: tuple = field(default=(), repr=False, compare=False)

    def __post_init__(self):
        if not _CATEGORY_RE.match(self.category):
            raise BadPattern(self.category, "", "category must match [a-z0-9_-]+")
        if not self.patterns:
            raise BadPattern(self.category, "", "rule has no patterns")
        if not self.compiled:
            compiled = tuple(
                compile_pattern(self.category, p, self.case_insensitive) for p in self.patterns
            )
            object.__setattr__(self, "compiled", compiled)

    def matches(self, text: str) -> bool:
        return any(p.search(text) for p in self.compiled)


@dataclass(frozen=True)
class Rulebook:
    rules: tuple[Rule, ...]
    source: str = "builtin"

    def __post_init__(self):
        if not self.rules:
            raise RuleError("a rulebook needs at least one rule")
        seen = set()
        for rule in self.rules:
            if rule.category in seen:
                raise DuplicateCategory(rule.category)
            seen.add(rule.category)

    @property
    def categories(self) -> list[str]:
        return [r.category for r in self.rules]

    def match(self, log: str) -> Optional[str]:
        return match_category(self, log)

    def dumps(self) -> str:
        """Render back into the rule-file format."""
        out = []
        for rule in self.rules:
            out.append(f"[{rule.category}]")
            if rule.description:
                out.append(f"description = {rule.description}")
            out.extend(f"pattern = {p}" for p in rule.patterns)
            out.append(f"case_insensitive = {'true' if rule.case_insensitive else 'false'}")
            out.append("")
        return "\n".join(out)


def match_category(rb: Rulebook, log: str) -> Optional[str]:
    """Category of the first rule with any pattern matching ``log``, else None."""
    if not log:
        return None
    text = strip_ansi(log)
    for rule in rb.rules:
        for pattern in rule.compiled:
            if pattern.search(text):
                return rule.category
    return None


def parse_rules(text: str, source: str = "<string>") -> Rulebook:
    rules: list[Rule] = []
    current: Optional[dict] = None
    seen: set[str] = set()

    def finish():
        if current is None:
            return
        if not current["patterns"]:
            raise RuleParseError(current["line"], f"[{current['category']}] has no patterns", source)
        rules.append(
            Rule(
                category=current["category"],
                patterns=tuple(current["patterns"]),
                description=current["description"],
                case_insensitive=current["case_insensitive"],
            )
        )

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith(("#", ";")):
            continue
        if line.startswith("["):
            if not line.endswith("]"):
                raise RuleParseError(lineno, f"malformed section header {line!r}", source)
            finish()
            name = line[1:-1].strip()
            if not _CATEGORY_RE.match(name):
                raise RuleParseError(lineno, f"invalid category id {name!r}", source)
            if name in seen:
                raise DuplicateCategory(name)
            seen.add(name)
            current = {
                "category": name,
                "line": lineno,
                "patterns": [],
                "description": "",
                "case_insensitive": True,
            }
            continue
        key, sep, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if not sep:
            raise RuleParseError(lineno, f"expected 'key = value', got {line!r}", source)
        if current is None:
            raise RuleParseError(lineno, f"{key!r} outside of a [category] section", source)
        if key == "pattern":
            if not value:
                raise RuleParseError(lineno, "empty pattern", source)
            current["patterns"].append(value)
        elif key == "description":
            current["description"] = value
        elif key == "case_insensitive":
            if value.lower() not in ("true", "false"):
                raise RuleParseError(lineno, f"case_insensitive must be true or false, got {value!r}", source)
            current["case_insensitive"] = value.lower() == "true"
        else:
            raise RuleParseError(lineno, f"unknown key {key!r}", source)
    finish()
    if not rules:
        raise RuleParseError(0, "no rules defined", source)
    return Rulebook(rules=tuple(rules), source=source)


# Generic starter categories. These are deliberately broad; real deployments
# should author rules against their own logs.
BUILTIN_RULES = r"""
[job_timeout]
description = Job killed after exceeding its time limit
pattern = execution took longer than \S+
pattern = \bjob (has )?(timed out|exceeded (the )?(maximum )?(time|timeout))
pattern = the job exceeded the maximum execution time

[runner_failure]
description = CI runner or executor failed independently of the job
pattern = runner system failure
pattern = job failed \(system failure\)
pattern = \brunner (has )?(lost|disconnected|crashed|stopped responding)
pattern = lost communication with the server

[connection_error]
description = Network connection to an external host failed
pattern = connection (timed out|refused|reset( by peer)?)
pattern = could not resolve host
pattern = temporary failure in name resolution
pattern = (tls|ssl) handshake (timeout|failed)

[out_of_memory]
description = Process killed for exceeding its memory limit
pattern = out of memory
pattern = \boom[- ]?kill(ed|er)?\b
pattern = cannot allocate memory
pattern = java\.lang\.OutOfMemoryError

[docker_pull_error]
description = Container image could not be pulled
pattern = error pulling image
pattern = failed to pull image
pattern = toomanyrequests: .*pull rate limit
pattern = manifest (for \S+ )?(unknown|not found)

[git_checkout_error]
description = Repository fetch or checkout failed
pattern = fatal: (unable to access|could not read from remote repository|reference is not a tree)
pattern = fatal: couldn't find remote ref
pattern = error: pathspec '.*' did not match

[dependency_install_error]
description = Package or dependency download failed
pattern = could not find a version that satisfies the requirement
pattern = npm err! (code )?e(timedout|connreset|integrity)
pattern = failed to (download|fetch) (crate|package|dependency|dependencies)

[disk_quota_exceeded]
description = Runner ran out of disk space
pattern = no space left on device
pattern = disk quota exceeded
pattern = not enough (free )?disk space
"""

_builtin_cache: Optional[Rulebook] = None


def load_rules(path=None) -> Rulebook:
    """Load a rule file, or the builtin starter rulebook when ``path`` is None."""
    global _builtin_cache
    if path is None:
        if _builtin_cache is None:
            _builtin_cache = parse_rules(BUILTIN_RULES, source="builtin")
        return _builtin_cache
    text = Path(path).read_text(encoding="utf-8")
    return parse_rules(text, source=str(path))
