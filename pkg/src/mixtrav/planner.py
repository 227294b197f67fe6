"""Planning graphs: typed category paths with optional textual restrictions.

Plans have a one-line text form::

    Institution<Point Park University> -> Author -> Paper ; Field-of-Study<Stellar Populations> -> Paper

Paths are separated by ``;`` and nodes by ``->``. A restriction sits in
``<...>`` directly after its category; ``\\<``, ``\\>``, ``\\;`` and ``\\\\``
escape the literal characters. A converging edge may be written with
`` <- `` (whitespace before it); parsing rewrites every path so it reads
source to target.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from .kb import Tgkb

DEFAULT_MAX_PATH_LEN = 3


@dataclass(frozen=True)
class PathNode:
    category: str
    restriction: str | None = None

    def __post_init__(self):
        category = " ".join(self.category.split())
        if not category:
            raise ValueError("path node category must be non-empty")
        object.__setattr__(self, "category", category)
        if self.restriction is not None:
            r = self.restriction.strip()
            if not r:
                raise ValueError("restriction must be non-empty when present")
            object.__setattr__(self, "restriction", r)


@dataclass(frozen=True)
class ReasoningPath:
    nodes: tuple[PathNode, ...]

    def __post_init__(self):
        object.__setattr__(self, "nodes", tuple(self.nodes))
        if not self.nodes:
            raise ValueError("a reasoning path needs at least one node")

    def __len__(self) -> int:
        return len(self.nodes)

    @property
    def target(self) -> str:
        return self.nodes[-1].category

    @property
    def categories(self) -> tuple[str, ...]:
        return tuple(n.category for n in self.nodes)


@dataclass(frozen=True)
class PlanningGraph:
    """A set of reasoning paths sharing one target category.

    Paths are deduplicated and kept in canonical (serialized) order so that
    structurally equal plans compare equal.
    """

    paths: tuple[ReasoningPath, ...]

    def __post_init__(self):
        unique = {serialize_path(p): p for p in self.paths}
        if not unique:
            raise ValueError("a planning graph needs at least one path")
        object.__setattr__(self, "paths", tuple(unique[k] for k in sorted(unique)))
        targets = {p.target for p in self.paths}
        if len(targets) != 1:
            raise ValueError("mixed target categories")

    @property
    def target(self) -> str:
        return self.paths[0].target

    def categories(self) -> set[str]:
        return {n.category for p in self.paths for n in p.nodes}

    def signature(self) -> str:
        """Category-only form, used to group queries by logic pattern."""
        return " ; ".join(sorted({" -> ".join(p.categories) for p in self.paths}))


@dataclass(frozen=True)
class PlanOutcome:
    graph: PlanningGraph | None = None
    reason: str | None = None
    raw: str | None = None

    def __post_init__(self):
        if (self.graph is None) == (self.reason is None):
            raise ValueError("exactly one of graph or reason must be set")

    @classmethod
    def valid(cls, graph: PlanningGraph, raw: str | None = None) -> "PlanOutcome":
        return cls(graph=graph, raw=raw)

    @classmethod
    def invalid(cls, reason: str, raw: str | None = None) -> "PlanOutcome":
        return cls(reason=reason or "invalid plan", raw=raw)

    @property
    def is_valid(self) -> bool:
        return self.graph is not None


class PlanSyntaxError(ValueError):
    pass


_ESCAPABLE = "\\<>;"


def escape_restriction(text: str) -> str:
    return "".join("\\" + ch if ch in _ESCAPABLE else ch for ch in text)


def serialize_path(path: ReasoningPath) -> str:
    parts = []
    for n in path.nodes:
        if n.restriction is None:
            parts.append(n.category)
        else:
            parts.append(f"{n.category}<{escape_restriction(n.restriction)}>")
    return " -> ".join(parts)


def serialize_plan(g: PlanningGraph) -> str:
    return " ; ".join(serialize_path(p) for p in g.paths)


# token kinds produced by the scanner
_NODE, _FWD, _BACK, _SEP = "node", "->", "<-", ";"


def _scan(text: str) -> list[tuple[str, object]]:
    tokens: list[tuple[str, object]] = []
    i, n = 0, len(text)
    while i < n:
        ch = text[i]
        if ch.isspace():
            i += 1
            continue
        if ch == ";":
            tokens.append((_SEP, None))
            i += 1
            continue
        if text.startswith("->", i):
            tokens.append((_FWD, None))
            i += 2
            continue
        if text.startswith("<-", i):
            tokens.append((_BACK, None))
            i += 2
            continue
        if ch in "<>":
            raise PlanSyntaxError(f"unexpected {ch!r} at column {i + 1}")
        # category: runs until an operator, a separator or a restriction
        start = i
        while i < n:
            if text[i] == ";" or text.startswith("->", i):
                break
            if text[i] == "<":
                if text.startswith("<-", i) and i > start and text[i - 1].isspace():
                    break
                break
            if text[i] == ">":
                raise PlanSyntaxError(f"unexpected '>' at column {i + 1}")
            i += 1
        category = " ".join(text[start:i].split())
        restriction = None
        if i < n and text[i] == "<" and not (text.startswith("<-", i) and text[i - 1].isspace()):
            i += 1
            buf = []
            while True:
                if i >= n:
                    raise PlanSyntaxError("unterminated restriction")
                c = text[i]
                if c == "\\":
                    if i + 1 >= n or text[i + 1] not in _ESCAPABLE:
                        raise PlanSyntaxError(f"bad escape at column {i + 1}")
                    buf.append(text[i + 1])
                    i += 2
                    continue
                if c == ">":
                    i += 1
                    break
                if c in "<;":
                    raise PlanSyntaxError(f"unescaped {c!r} inside restriction")
                buf.append(c)
                i += 1
            restriction = "".join(buf).strip()
            if not restriction:
                raise PlanSyntaxError("empty restriction")
        if not category:
            raise PlanSyntaxError("missing category")
        tokens.append((_NODE, PathNode(category, restriction)))
    return tokens


def _chain_to_paths(chain: list[tuple[str, object]]) -> list[ReasoningPath]:
    """Turn ``n0 op n1 op n2 ...`` into source-to-target paths."""
    if not chain:
        raise PlanSyntaxError("empty path")
    if chain[0][0] != _NODE or chain[-1][0] != _NODE:
        raise PlanSyntaxError("dangling arrow")
    nodes = chain[0::2]
    ops = chain[1::2]
    if any(k != _NODE for k, _ in nodes) or any(k not in (_FWD, _BACK) for k, _ in ops):
        if any(k == _NODE for k, _ in ops):
            raise PlanSyntaxError("missing arrow between nodes")
        raise PlanSyntaxError("dangling arrow")
    items = [v for _, v in nodes]
    dirs = [k for k, _ in ops]
    if not dirs:
        return [ReasoningPath((items[0],))]
    paths = []
    start = 0
    while start < len(dirs):
        end = start
        while end + 1 < len(dirs) and dirs[end + 1] == dirs[start]:
            end += 1
        run = items[start : end + 2]
        if dirs[start] == _BACK:
            run = run[::-1]
        paths.append(ReasoningPath(tuple(run)))
        start = end + 1
    return paths


def parse_plan(text: str) -> PlanOutcome:
    """Parse plan text; every failure is reported as an invalid outcome."""
    if text is None or not text.strip():
        return PlanOutcome.invalid("empty plan", raw=text)
    try:
        tokens = _scan(text)
        chains: list[list[tuple[str, object]]] = [[]]
        for tok in tokens:
            if tok[0] == _SEP:
                chains.append([])
            else:
                chains[-1].append(tok)
        paths: list[ReasoningPath] = []
        for chain in chains:
            if not chain:
                raise PlanSyntaxError("empty path")
            paths.extend(_chain_to_paths(chain))
        return PlanOutcome.valid(PlanningGraph(tuple(paths)), raw=text)
    except (PlanSyntaxError, ValueError) as exc:
        return PlanOutcome.invalid(str(exc), raw=text)


def validate_plan(g: PlanningGraph, kb: Tgkb, max_path_len: int = DEFAULT_MAX_PATH_LEN) -> PlanOutcome:
    for p in g.paths:
        for node in p.nodes:
            if node.category not in kb.schema:
                return PlanOutcome.invalid(f"unknown category {node.category}")
    for p in g.paths:
        if len(p) > max_path_len:
            return PlanOutcome.invalid("path too long")
    return PlanOutcome.valid(g)


@dataclass(frozen=True)
class TemplateRule:
    """``pattern`` holds ``{slot}`` placeholders; ``plan`` is plan text using the same slots."""

    pattern: str
    plan: str
    name: str = ""
    _regex: re.Pattern = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        parts = re.split(r"\{(\w+)\}", self.pattern)
        regex = []
        for k, part in enumerate(parts):
            if k % 2 == 0:
                regex.append(r"\s+".join(re.escape(w) for w in part.split(" ")))
            else:
                regex.append(f"(?P<{part}>.+?)")
        body = "".join(regex)
        object.__setattr__(
            self, "_regex", re.compile(rf"(?:^|\b){body}\s*[?.!]*\s*$", re.IGNORECASE)
        )

    def match(self, query: str) -> dict[str, str] | None:
        m = self._regex.search(query.strip())
        if m is None:
            return None
        return {k: " ".join(v.split()) for k, v in m.groupdict().items()}

    def instantiate(self, slots: dict[str, str]) -> str:
        return re.sub(r"\{(\w+)\}", lambda m: escape_restriction(slots[m.group(1)]), self.plan)


def plan_template(query: str, rules: Sequence[TemplateRule]) -> PlanOutcome:
    """Instantiate the first rule whose pattern matches ``query``."""
    for rule in rules:
        slots = rule.match(query)
        if slots is None:
            continue
        try:
            text = rule.instantiate(slots)
        except KeyError as exc:
            return PlanOutcome.invalid(f"template slot {exc.args[0]} not captured")
        return parse_plan(text)
    return PlanOutcome.invalid("no matching template")


def load_rules(items: Iterable[dict]) -> list[TemplateRule]:
    return [TemplateRule(d["pattern"], d["plan"], d.get("name", "")) for d in items]
