"""Seeded generator of academic-graph knowledge bases with planned queries.

The default schema mimics a bibliographic graph (institutions, authors,
papers, fields of study). Every node gets a unique two-word name drawn from
a pool of pseudo-words private to its category, plus a short body of
Zipf-distributed topic words. Queries are instantiated from metapath
templates around a randomly chosen witness node, and their answers are
computed with :func:`brute_force_retrieve` on the gold plan.

``text_informativeness`` moves answer-identifying signal from edges into
documents: it is both the probability that a target node's document
mentions the names of the entities that identify it structurally, and the
mixing weight of text-property templates against relational ones.
"""

from __future__ import annotations

import logging
import math
import re
from dataclasses import dataclass, field, replace

import numpy as np

from .kb import EdgeRecord, NodeRecord, Tgkb
from .planner import PlanningGraph, escape_restriction, parse_plan, serialize_plan
from .queries import QueryRecord
from .text import tokenize
from .traversal import brute_force_retrieve

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class EdgeSpec:
    """Each ``src`` node links to about ``mean_degree`` ``dst`` nodes (at least ``min_degree``)."""

    src: str
    dst: str
    mean_degree: float
    min_degree: int = 1


@dataclass(frozen=True)
class QueryTemplate:
    name: str
    text: str
    plan: str

    @property
    def slots(self) -> list[str]:
        return re.findall(r"\{(\w+)\}", self.plan)

    @property
    def textual(self) -> bool:
        """True when the target node itself carries a restriction (a property requirement)."""
        g = _skeleton(self.plan)
        return any(p.nodes[-1].restriction is not None for p in g.paths)


def _skeleton(plan: str) -> PlanningGraph:
    outcome = parse_plan(re.sub(r"\{(\w+)\}", r"\1", plan))
    if not outcome.is_valid:
        raise ValueError(f"bad template plan {plan!r}: {outcome.reason}")
    return outcome.graph


MAG_COUNTS = {"Institution": 200, "Author": 2500, "Paper": 6500, "Field-of-Study": 800}
MAG_EDGES = (
    EdgeSpec("Author", "Institution", 1.0, 1),
    EdgeSpec("Paper", "Author", 2.5, 1),
    EdgeSpec("Paper", "Field-of-Study", 1.6, 1),
    EdgeSpec("Paper", "Paper", 1.0, 0),
)
MAG_TEMPLATES = (
    QueryTemplate(
        "inst_field",
        "publications by {inst} authors on {field}",
        "Institution<{inst}> -> Author -> Paper ; Field-of-Study<{field}> -> Paper",
    ),
    QueryTemplate("author", "papers written by {author}", "Author<{author}> -> Paper"),
    QueryTemplate(
        "author_field",
        "papers by {author} in the area of {field}",
        "Author<{author}> -> Paper ; Field-of-Study<{field}> -> Paper",
    ),
    QueryTemplate("topic", "papers discussing {topic}", "Paper<{topic}>"),
    QueryTemplate("field_topic", "papers in {field} that discuss {topic}", "Field-of-Study<{field}> -> Paper<{topic}>"),
)
BODY_WORDS = {"Institution": 4, "Author": 3, "Paper": 12, "Field-of-Study": 5}


@dataclass(frozen=True)
class SynthConfig:
    counts: dict = field(default_factory=lambda: dict(MAG_COUNTS))
    edges: tuple = MAG_EDGES
    degree: str = "powerlaw"
    vocab_size: int = 3000
    body_words: dict = field(default_factory=lambda: dict(BODY_WORDS))
    templates: tuple = MAG_TEMPLATES
    text_informativeness: float = 0.3
    n_queries: int = 200
    max_answers: int = 20
    max_attempts: int = 50
    seed: int = 0

    @property
    def schema(self) -> set[str]:
        return set(self.counts)

    def validate(self) -> None:
        if not 0.0 <= self.text_informativeness <= 1.0:
            raise ValueError("text_informativeness must lie in [0, 1]")
        if self.degree not in ("uniform", "powerlaw"):
            raise ValueError("degree must be 'uniform' or 'powerlaw'")
        for e in self.edges:
            if e.src not in self.counts or e.dst not in self.counts:
                raise ValueError(f"edge spec {e} references a category outside the schema")
        for t in self.templates:
            unknown = _skeleton(t.plan).categories() - self.schema
            if unknown:
                raise ValueError(f"template {t.name} references unknown categories {sorted(unknown)}")

    def scaled(self, total: int) -> "SynthConfig":
        """Same proportions with roughly ``total`` nodes."""
        s = total / sum(self.counts.values())
        counts = {c: max(2, int(round(n * s))) for c, n in self.counts.items()}
        return replace(self, counts=counts)


@dataclass
class QueryInfo:
    template: str
    textual: bool
    structure_words: int
    text_words: int


@dataclass
class SynthDataset:
    kb: Tgkb
    queries: list[QueryRecord]
    info: dict[str, QueryInfo]
    names: dict[str, str]


_CONSONANTS = "bcdfghjklmnprstvz"
_VOWELS = "aeiou"


def _pseudo_words(rng: np.random.Generator, n: int, taken: set[str]) -> list[str]:
    out = []
    while len(out) < n:
        syll = int(rng.integers(2, 4))
        w = "".join(_CONSONANTS[rng.integers(len(_CONSONANTS))] + _VOWELS[rng.integers(len(_VOWELS))] for _ in range(syll))
        if w not in taken:
            taken.add(w)
            out.append(w)
    return out


def _slug(category: str) -> str:
    return "".join(ch for ch in category.lower() if ch.isalnum())


def _weights(rng: np.random.Generator, n: int, mode: str) -> np.ndarray:
    if mode == "uniform":
        w = np.ones(n)
    else:
        w = (np.arange(n) + 1.0) ** -0.8
        w = w[rng.permutation(n)]
    return w / w.sum()


def synth_generate(cfg: SynthConfig) -> SynthDataset:
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    taken: set[str] = set()
    vocab = _pseudo_words(rng, cfg.vocab_size, taken)
    zipf = 1.0 / (np.arange(cfg.vocab_size) + 1.0) ** 1.05
    zipf /= zipf.sum()

    ids: dict[str, list[str]] = {}
    names: dict[str, str] = {}
    bodies: dict[str, str] = {}
    for category in sorted(cfg.counts):
        n = cfg.counts[category]
        pool_size = int(math.ceil(math.sqrt(4 * n))) + 2
        pool = _pseudo_words(rng, pool_size, taken)
        pairs = [(a, b) for a in range(pool_size) for b in range(a + 1, pool_size)]
        chosen = rng.choice(len(pairs), size=n, replace=False)
        width = max(5, len(str(n)))
        ids[category] = [f"{_slug(category)}-{k:0{width}d}" for k in range(n)]
        n_body = cfg.body_words.get(category, 4)
        for node_id, pi in zip(ids[category], chosen):
            a, b = pairs[pi]
            names[node_id] = f"{pool[a]} {pool[b]}"
            words = rng.choice(cfg.vocab_size, size=n_body, p=zipf)
            bodies[node_id] = " ".join(vocab[w] for w in words)

    edge_set: set[tuple[str, str]] = set()
    edges: list[EdgeRecord] = []
    for spec in cfg.edges:
        dst_ids = ids[spec.dst]
        w = _weights(rng, len(dst_ids), cfg.degree)
        extra = max(spec.mean_degree - spec.min_degree, 0.0)
        for src in ids[spec.src]:
            k = spec.min_degree + int(rng.poisson(extra))
            k = min(k, len(dst_ids) - (1 if spec.src == spec.dst else 0))
            if k <= 0:
                continue
            picks = rng.choice(len(dst_ids), size=min(len(dst_ids), k + 1), replace=False, p=w)
            added = 0
            for p in picks:
                dst = dst_ids[p]
                if dst == src or added == k:
                    continue
                key = tuple(sorted((src, dst)))
                if key in edge_set:
                    continue
                edge_set.add(key)
                edges.append(EdgeRecord(src, dst, f"{_slug(spec.src)}_{_slug(spec.dst)}"))
                added += 1

    category_of = {i: c for c, members in ids.items() for i in members}
    neighbors: dict[str, dict[str, list[str]]] = {}
    for e in edges:
        for a, b in ((e.src, e.dst), (e.dst, e.src)):
            neighbors.setdefault(a, {}).setdefault(category_of[b], []).append(b)

    # mentions: names of the restricted sources reachable backwards along template paths
    mention_paths = []
    for t in cfg.templates:
        for p in _skeleton(t.plan).paths:
            restricted = [k for k, node in enumerate(p.nodes[:-1]) if node.restriction is not None]
            if restricted:
                mention_paths.append(p.categories[restricted[0]:])
    mention_paths = list(dict.fromkeys(mention_paths))
    docs: dict[str, str] = {}
    for category in sorted(cfg.counts):
        for node_id in ids[category]:
            text = f"{names[node_id]} {bodies[node_id]}"
            paths_here = [mp for mp in mention_paths if mp[-1] == category]
            if paths_here and rng.random() < cfg.text_informativeness:
                mentioned = []
                for mp in paths_here:
                    frontier = {node_id}
                    for cat in reversed(mp[:-1]):
                        frontier = {u for v in sorted(frontier) for u in neighbors.get(v, {}).get(cat, ())}
                    mentioned.extend(names[u] for u in sorted(frontier))
                if mentioned:
                    text += " " + " ".join(dict.fromkeys(mentioned))
            docs[node_id] = text

    kb = Tgkb(
        [NodeRecord(i, c, docs[i]) for c in sorted(ids) for i in ids[c]],
        edges,
    )
    queries, info = _make_queries(cfg, kb, rng, names, neighbors, ids)
    return SynthDataset(kb, queries, info, names)


def _make_queries(cfg, kb, rng, names, neighbors, ids):
    textual = [t for t in cfg.templates if t.textual]
    relational = [t for t in cfg.templates if not t.textual]
    tau = cfg.text_informativeness
    doc_freq: dict[str, int] = {}
    for c in ids:
        for i in ids[c]:
            for tok in set(tokenize(kb.nodes[i].document)):
                doc_freq[tok] = doc_freq.get(tok, 0) + 1

    queries: list[QueryRecord] = []
    info: dict[str, QueryInfo] = {}
    skipped = 0
    qn = 0
    while len(queries) < cfg.n_queries:
        if skipped > cfg.n_queries * 2:
            logger.warning("synth: giving up after %d unsatisfiable draws", skipped)
            break
        use_text = textual and (not relational or rng.random() < tau)
        family = textual if use_text else relational
        template = family[int(rng.integers(len(family)))]
        made = None
        for _ in range(cfg.max_attempts):
            made = _instantiate(template, kb, rng, names, neighbors, ids, doc_freq)
            if made is None:
                continue
            plan_text, slots, graph = made
            answers = brute_force_retrieve(kb, graph)
            if 1 <= len(answers) <= cfg.max_answers:
                break
            made = None
        if made is None:
            logger.warning("synth: template %s unsatisfiable after %d attempts, skipping", template.name, cfg.max_attempts)
            skipped += 1
            continue
        plan_text, slots, graph = made
        qid = f"q{qn:05d}"
        qn += 1
        text = template.text.format(**slots)
        queries.append(QueryRecord(qid, text, frozenset(answers), plan_text))
        s_words = t_words = 0
        for p in graph.paths:
            for k, node in enumerate(p.nodes):
                if node.restriction:
                    if k == len(p.nodes) - 1:
                        t_words += len(tokenize(node.restriction))
                    else:
                        s_words += len(tokenize(node.restriction))
        info[qid] = QueryInfo(template.name, template.textual, s_words, t_words)
    return queries, info


def _instantiate(template, kb, rng, names, neighbors, ids, doc_freq):
    skeleton = _skeleton(template.plan)
    target = skeleton.target
    pool = ids[target]
    witness = pool[int(rng.integers(len(pool)))]
    slots: dict[str, str] = {}
    for p in skeleton.paths:
        node_id = witness
        chain = [witness]
        for cat in reversed(p.categories[:-1]):
            options = neighbors.get(node_id, {}).get(cat, [])
            if not options:
                return None
            node_id = sorted(options)[int(rng.integers(len(options)))]
            chain.append(node_id)
        chain.reverse()
        for pnode, node_id in zip(p.nodes, chain):
            slot = pnode.restriction
            if slot is None:
                continue
            if pnode is p.nodes[-1]:
                body = [w for w in tokenize(kb.nodes[node_id].document) if w not in tokenize(names[node_id])]
                rare = sorted(set(body), key=lambda w: (doc_freq[w], w))[:2]
                if len(rare) < 2:
                    return None
                slots[slot] = " ".join(rare)
            else:
                slots[slot] = names[node_id]
    plan_text = re.sub(r"\{(\w+)\}", lambda m: escape_restriction(slots[m.group(1)]), template.plan)
    outcome = parse_plan(plan_text)
    if not outcome.is_valid:
        return None
    return serialize_plan(outcome.graph), slots, outcome.graph
