"""Query records and their JSONL file format."""

from __future__ import annotations

import json
from dataclasses import dataclass, field


@dataclass(frozen=True)
class QueryRecord:
    id: str
    text: str
    answers: frozenset[str] = field(default_factory=frozenset)
    gold_plan: str | None = None

    def to_json(self) -> str:
        obj = {"id": self.id, "text": self.text, "answers": sorted(self.answers)}
        if self.gold_plan is not None:
            obj["plan"] = self.gold_plan
        return json.dumps(obj, ensure_ascii=False)


def parse_queries(text: str) -> list[QueryRecord]:
    out = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
            out.append(QueryRecord(str(obj["id"]), obj["text"], frozenset(obj.get("answers", ())), obj.get("plan")))
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            raise ValueError(f"queries line {lineno}: {exc}") from None
    return out


def load_queries(path) -> list[QueryRecord]:
    with open(path, encoding="utf-8") as fh:
        return parse_queries(fh.read())


def dump_queries(queries) -> str:
    return "".join(q.to_json() + "\n" for q in queries)
