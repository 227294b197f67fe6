"""Text-rich graph knowledge base: typed nodes with documents plus edges.

The store is built once (directly or through :func:`load_kb`) and is
read-only afterwards, so it can be shared freely between traversal workers.
"""

from __future__ import annotations

import io
import json
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from typing import IO, Iterable, Mapping

import numpy as np


class KbError(ValueError):
    """Raised when knowledge-base input is malformed or inconsistent."""


class UnknownNodeError(KeyError):
    def __init__(self, node_id: str):
        super().__init__(node_id)
        self.node_id = node_id

    def __str__(self) -> str:
        return f"unknown node id {self.node_id!r}"


@dataclass(frozen=True)
class NodeRecord:
    id: str
    category: str
    document: str = ""
    metadata: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self):
        if not self.id:
            raise KbError("node id must be non-empty")
        if not self.category:
            raise KbError(f"node {self.id!r} has an empty category")
        if self.document is None:
            raise KbError(f"node {self.id!r} has no document")


@dataclass(frozen=True)
class EdgeRecord:
    src: str
    dst: str
    relation: str = ""


class Tgkb:
    """Immutable, fully indexed knowledge base.

    ``ids`` is the ascending list of node ids; every positional array
    (scorer outputs, ``category_positions``) is aligned with it.
    """

    def __init__(self, nodes: Iterable[NodeRecord], edges: Iterable[EdgeRecord]):
        nodes = list(nodes)
        edges = list(edges)
        by_id: dict[str, NodeRecord] = {}
        for node in nodes:
            if node.id in by_id:
                raise KbError(f"duplicate node id {node.id!r}")
            by_id[node.id] = node
        self.ids: tuple[str, ...] = tuple(sorted(by_id))
        self.nodes: dict[str, NodeRecord] = {i: by_id[i] for i in self.ids}
        self.position: dict[str, int] = {i: n for n, i in enumerate(self.ids)}

        for e in edges:
            for end in (e.src, e.dst):
                if end not in self.nodes:
                    raise KbError(f"edge ({e.src}, {e.dst}) references unknown node id {end!r}")
        self.edges: tuple[EdgeRecord, ...] = tuple(
            sorted(edges, key=lambda e: (e.src, e.dst, e.relation))
        )

        groups: dict[tuple[str, str], set[str]] = defaultdict(set)
        for e in self.edges:
            groups[(e.src, self.nodes[e.dst].category)].add(e.dst)
            groups[(e.dst, self.nodes[e.src].category)].add(e.src)
        self.adjacency: dict[tuple[str, str], tuple[str, ...]] = {
            key: tuple(sorted(members)) for key, members in sorted(groups.items())
        }

        by_cat: dict[str, list[str]] = defaultdict(list)
        for i in self.ids:
            by_cat[self.nodes[i].category].append(i)
        self.category_index: dict[str, tuple[str, ...]] = {
            c: tuple(members) for c, members in sorted(by_cat.items())
        }
        self.schema: frozenset[str] = frozenset(self.category_index)
        self._cat_positions = {
            c: np.fromiter((self.position[i] for i in members), dtype=np.int64, count=len(members))
            for c, members in self.category_index.items()
        }
        for arr in self._cat_positions.values():
            arr.flags.writeable = False

    def __len__(self) -> int:
        return len(self.ids)

    def __contains__(self, node_id: object) -> bool:
        return node_id in self.nodes

    def __repr__(self) -> str:
        return f"Tgkb(nodes={len(self.ids)}, edges={len(self.edges)}, categories={sorted(self.schema)})"

    def node(self, node_id: str) -> NodeRecord:
        try:
            return self.nodes[node_id]
        except KeyError:
            raise UnknownNodeError(node_id) from None

    def category_of(self, node_id: str) -> str:
        return self.node(node_id).category

    def document(self, node_id: str) -> str:
        return self.node(node_id).document

    def category_positions(self, category: str) -> np.ndarray:
        """Positions (into ``ids``) of the nodes of ``category``; empty if unknown."""
        return self._cat_positions.get(category, _EMPTY_POSITIONS)

    def neighbors(self, node_id: str) -> list[str]:
        """All neighbors of ``node_id`` regardless of category, sorted."""
        self.node(node_id)
        out: set[str] = set()
        for c in self.schema:
            out.update(self.adjacency.get((node_id, c), ()))
        return sorted(out)


_EMPTY_POSITIONS = np.zeros(0, dtype=np.int64)
_EMPTY_POSITIONS.flags.writeable = False


def neighbors_of_category(kb: Tgkb, v: str, c: str) -> tuple[str, ...]:
    """Neighbors of ``v`` whose category is ``c``, ascending by id."""
    if v not in kb.nodes:
        raise UnknownNodeError(v)
    return kb.adjacency.get((v, c), ())


def _lines(source) -> Iterable[tuple[int, str]]:
    if source is None:
        return
    if isinstance(source, (bytes, bytearray)):
        source = io.BytesIO(source)
    elif isinstance(source, str):
        source = io.StringIO(source)
    for lineno, raw in enumerate(source, start=1):
        if isinstance(raw, (bytes, bytearray)):
            raw = raw.decode("utf-8")
        line = raw.strip()
        if line:
            yield lineno, line


def _parse_object(lineno: int, line: str, what: str) -> dict:
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as exc:
        raise KbError(f"{what} line {lineno}: malformed JSON ({exc.msg})") from None
    if not isinstance(obj, dict):
        raise KbError(f"{what} line {lineno}: expected a JSON object")
    return obj


def _require_str(obj: dict, key: str, lineno: int, what: str, *, optional=False, default=""):
    if key not in obj:
        if optional:
            return default
        raise KbError(f"{what} line {lineno}: missing field {key!r}")
    value = obj[key]
    if not isinstance(value, str):
        raise KbError(f"{what} line {lineno}: field {key!r} must be a string")
    return value


def load_kb(nodes_source, edges_source) -> Tgkb:
    """Load a knowledge base from line-delimited JSON.

    Sources may be binary or text file objects, ``bytes`` or ``str``.
    Node lines look like ``{"id", "category", "text", "meta"?}`` and edge
    lines like ``{"src", "dst", "rel"?}``. Blank lines are ignored.
    """
    nodes = []
    for lineno, line in _lines(nodes_source):
        obj = _parse_object(lineno, line, "nodes")
        node_id = _require_str(obj, "id", lineno, "nodes")
        category = _require_str(obj, "category", lineno, "nodes")
        text = _require_str(obj, "text", lineno, "nodes")
        meta = obj.get("meta") or {}
        if not isinstance(meta, dict) or not all(
            isinstance(k, str) and isinstance(v, str) for k, v in meta.items()
        ):
            raise KbError(f"nodes line {lineno}: 'meta' must map strings to strings")
        if not node_id or not category:
            raise KbError(f"nodes line {lineno}: id and category must be non-empty")
        nodes.append(NodeRecord(node_id, category, text, dict(meta)))

    edges = []
    for lineno, line in _lines(edges_source):
        obj = _parse_object(lineno, line, "edges")
        src = _require_str(obj, "src", lineno, "edges")
        dst = _require_str(obj, "dst", lineno, "edges")
        rel = _require_str(obj, "rel", lineno, "edges", optional=True)
        edges.append(EdgeRecord(src, dst, rel))
    return Tgkb(nodes, edges)


def load_kb_files(nodes_path, edges_path) -> Tgkb:
    with open(nodes_path, "rb") as nf, open(edges_path, "rb") as ef:
        return load_kb(nf, ef)


def dump_nodes(kb: Tgkb) -> str:
    lines = []
    for i in kb.ids:
        n = kb.nodes[i]
        obj = {"id": n.id, "category": n.category, "text": n.document}
        if n.metadata:
            obj["meta"] = dict(sorted(n.metadata.items()))
        lines.append(json.dumps(obj, ensure_ascii=False))
    return "".join(line + "\n" for line in lines)


def dump_edges(kb: Tgkb) -> str:
    return "".join(
        json.dumps({"src": e.src, "dst": e.dst, "rel": e.relation}, ensure_ascii=False) + "\n"
        for e in kb.edges
    )


def save_kb(kb: Tgkb, nodes_sink: IO, edges_sink: IO) -> None:
    """Write ``kb`` in the same JSONL formats :func:`load_kb` reads.

    Output is byte-stable: nodes sorted by id, edges by (src, dst, rel).
    """
    for sink, text in ((nodes_sink, dump_nodes(kb)), (edges_sink, dump_edges(kb))):
        if isinstance(sink, io.TextIOBase):
            sink.write(text)
        else:
            sink.write(text.encode("utf-8"))


def save_kb_files(kb: Tgkb, nodes_path, edges_path) -> None:
    with open(nodes_path, "wb") as nf, open(edges_path, "wb") as ef:
        save_kb(kb, nf, ef)


@dataclass
class ValidationReport:
    isolated: list[str] = field(default_factory=list)
    empty_documents: list[str] = field(default_factory=list)
    category_counts: dict[str, int] = field(default_factory=dict)

    def is_empty(self) -> bool:
        return not (self.isolated or self.empty_documents or self.category_counts)

    def to_dict(self) -> dict:
        return {
            "isolated": list(self.isolated),
            "empty_documents": list(self.empty_documents),
            "category_counts": dict(self.category_counts),
        }


def validate_kb(kb: Tgkb) -> ValidationReport:
    connected = set()
    for e in kb.edges:
        connected.add(e.src)
        connected.add(e.dst)
    counts = Counter(n.category for n in kb.nodes.values())
    return ValidationReport(
        isolated=[i for i in kb.ids if i not in connected],
        empty_documents=[i for i in kb.ids if not kb.nodes[i].document.strip()],
        category_counts=dict(sorted(counts.items())),
    )
