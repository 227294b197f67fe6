"""Chat-completion planner client.

One request per query. Every failure (transport, HTTP status, unparseable
reply) comes back as an invalid :class:`PlanOutcome` so the retrieval
pipeline can always fall back to plain textual matching.
"""

from __future__ import annotations

import json
import logging
import os
import re
from dataclasses import dataclass
from typing import Sequence

import httpx

from .planner import PlanOutcome, escape_restriction, parse_plan

logger = logging.getLogger(__name__)

SYSTEM_MESSAGE = (
    "Translate the user's question into a retrieval plan over a typed graph.\n"
    "Give the chain of node types the answer is reached through, ending at the type of the "
    "answer, and for each type give any name or topic the question pins it to "
    "(omit types the question does not constrain).\n"
    "Use only types from the Entity Type List below. Reply with a single line in the "
    "Output Format and nothing else."
)
OUTPUT_FORMAT = 'Metapath: "", Restriction: {}'


@dataclass(frozen=True)
class EndpointConfig:
    base_url: str
    model: str
    api_key_env: str = "PLANNER_API_KEY"
    timeout: float = 30.0


@dataclass(frozen=True)
class Demonstration:
    question: str
    metapath: str
    restriction: dict

    def render(self) -> str:
        return (
            f"Question: {self.question}\n"
            f'Metapath: "{self.metapath}", Restriction: {json.dumps(self.restriction, ensure_ascii=False)}'
        )


def build_messages(query: str, schema: Sequence[str], demos: Sequence[Demonstration]) -> list[dict]:
    user = [
        "Entity Type List: " + ", ".join(schema),
        "Demonstrations:",
        *(d.render() for d in demos),
        f"Output Format: {OUTPUT_FORMAT}",
        f"Question: {query}",
    ]
    return [
        {"role": "system", "content": SYSTEM_MESSAGE},
        {"role": "user", "content": "\n".join(user)},
    ]


_METAPATH = re.compile(r'Metapath\s*:\s*"([^"]*)"', re.IGNORECASE)
_RESTRICTION = re.compile(r"Restriction\s*:\s*(\{.*\})", re.IGNORECASE | re.DOTALL)


def parse_planner_output(text: str) -> PlanOutcome:
    """Turn a ``Metapath: "...", Restriction: {...}`` reply into a plan."""
    m = _METAPATH.search(text or "")
    if m is None or not m.group(1).strip():
        return PlanOutcome.invalid("unparseable planner output", raw=text)
    restriction: dict = {}
    r = _RESTRICTION.search(text)
    if r is not None:
        try:
            restriction = json.loads(r.group(1))
        except json.JSONDecodeError:
            return PlanOutcome.invalid("unparseable planner output", raw=text)
        if not isinstance(restriction, dict):
            return PlanOutcome.invalid("unparseable planner output", raw=text)

    pieces = []
    for piece in re.split(r"(->|<-|;)", m.group(1)):
        if piece in ("->", "<-", ";"):
            pieces.append(piece)
            continue
        category = " ".join(piece.split())
        value = restriction.get(category)
        if isinstance(value, list):
            value = " ".join(str(v) for v in value)
        if value is not None and str(value).strip():
            category += f"<{escape_restriction(str(value).strip())}>"
        pieces.append(category)
    metapath = " ".join(pieces)
    outcome = parse_plan(metapath)
    if not outcome.is_valid:
        return PlanOutcome.invalid("unparseable planner output", raw=text)
    return PlanOutcome.valid(outcome.graph, raw=text)


def plan_llm(
    query: str,
    endpoint: EndpointConfig,
    schema: Sequence[str],
    demos: Sequence[Demonstration] = (),
    client: httpx.Client | None = None,
) -> PlanOutcome:
    """Ask a chat-completion endpoint for a plan. Never raises."""
    if not schema:
        return PlanOutcome.invalid("empty schema")
    token = os.environ.get(endpoint.api_key_env, "")
    headers = {"Authorization": f"Bearer {token}"} if token else {}
    body = {
        "model": endpoint.model,
        "messages": build_messages(query, schema, demos),
        "temperature": 0,
    }
    url = endpoint.base_url.rstrip("/") + "/chat/completions"
    owned = client is None
    try:
        if owned:
            client = httpx.Client(timeout=endpoint.timeout)
        try:
            resp = client.post(url, json=body, headers=headers)
        finally:
            if owned:
                client.close()
    except (httpx.HTTPError, OSError) as exc:
        logger.warning("planner endpoint unreachable: %s", exc)
        return PlanOutcome.invalid("planner endpoint unreachable", raw=str(exc))
    if resp.status_code != 200:
        return PlanOutcome.invalid(f"planner endpoint returned HTTP {resp.status_code}", raw=resp.text)
    try:
        content = resp.json()["choices"][0]["message"]["content"]
    except (ValueError, KeyError, IndexError, TypeError):
        return PlanOutcome.invalid("unparseable planner output", raw=resp.text)
    if not isinstance(content, str):
        return PlanOutcome.invalid("unparseable planner output", raw=resp.text)
    try:
        return parse_planner_output(content)
    except Exception:  # the fallback path must stay reachable
        logger.exception("planner output parsing failed")
        return PlanOutcome.invalid("unparseable planner output", raw=content)
