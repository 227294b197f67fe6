"""Mixed structural/textual traversal guided by a planning graph.

For each reasoning path the first layer is seeded by textual matching.
Every later layer is the union of (a) neighbors of the previous layer with
the prescribed category and (b) the top textual matches for that category.
Per-path results are intersected; each surviving candidate keeps the single
trajectory that reached it with the most information.
"""

from __future__ import annotations

import json
import weakref
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Iterable, NamedTuple

import numpy as np

from .kb import Tgkb
from .planner import PlanningGraph, PlanOutcome, ReasoningPath
from .scoring import Scorer, rank_positions
from .text import expand_query, satisfies_restriction, token_set


class StepKind(str, Enum):
    SEED = "seed"
    STRUCTURAL = "structural"
    TEXTUAL = "textual"


@dataclass(frozen=True)
class TraversalConfig:
    """Traversal knobs.

    ``per_layer_text=0`` switches textual augmentation off. ``full_seeding``
    seeds with every node of the first category that satisfies the
    restriction, and ``strict_restrictions`` applies the same token filter to
    structural expansion; together with ``per_layer_text=0`` they make the
    traversal an exact structural query. Textual matching only admits
    nodes whose score is strictly positive (a document sharing nothing with
    the expanded query is not a match) unless ``keep_unmatched_text`` is set.
    """

    n_seeds: int = 5
    per_layer_text: int = 10
    fallback_k: int = 20
    rerank_pool: int = 100
    use_structural: bool = True
    full_seeding: bool = False
    strict_restrictions: bool = False
    keep_unmatched_text: bool = False

    def __post_init__(self):
        for name in ("n_seeds", "fallback_k", "rerank_pool"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.per_layer_text < 0:
            raise ValueError("per_layer_text must be >= 0")

    @classmethod
    def structural_only(cls, **kw) -> "TraversalConfig":
        return cls(per_layer_text=0, full_seeding=True, strict_restrictions=True, **kw)


@dataclass(frozen=True)
class TrajectoryStep:
    node: str
    category: str
    kind: StepKind
    restriction: str | None = None


@dataclass(frozen=True)
class Trajectory:
    """Steps that reached a candidate.

    ``start_layer`` is the index of the path node matched by the first
    step; a textual match introduced at layer 3 starts a fresh trajectory
    there.
    """

    steps: tuple[TrajectoryStep, ...]
    path_index: int = 0
    start_layer: int = 0

    @property
    def final(self) -> TrajectoryStep:
        return self.steps[-1]

    @property
    def node(self) -> str:
        return self.steps[-1].node

    def __len__(self) -> int:
        return len(self.steps)

    def extend(self, step: TrajectoryStep) -> "Trajectory":
        return Trajectory(self.steps + (step,), self.path_index, self.start_layer)

    def n_structural(self) -> int:
        return sum(s.kind is StepKind.STRUCTURAL for s in self.steps)

    def retention_key(self):
        """Smaller is better: longest, then most structural, then smallest ids."""
        return (-len(self.steps), -self.n_structural(), tuple(s.node for s in self.steps), self.path_index)

    def to_dict(self) -> dict:
        return {
            "path_index": self.path_index,
            "start_layer": self.start_layer,
            "steps": [
                {"node": s.node, "category": s.category, "kind": s.kind.value,
                 **({"restriction": s.restriction} if s.restriction else {})}
                for s in self.steps
            ],
        }


CandidateSet = dict  # node id -> Trajectory


def merge_candidates(*sets: CandidateSet) -> CandidateSet:
    """Union of candidate sets keeping the most informative trajectory per node."""
    out: CandidateSet = {}
    for cs in sets:
        for node, traj in cs.items():
            cur = out.get(node)
            if cur is None or traj.retention_key() < cur.retention_key():
                out[node] = traj
    return out


def expand_structural(
    kb: Tgkb,
    prev: CandidateSet,
    c: str,
    restriction: str | None = None,
    keep: Callable[[str], bool] | None = None,
) -> CandidateSet:
    """Neighbors of category ``c`` of every node in ``prev``.

    When several parents reach a child, the smallest parent id supplies the
    trajectory. ``keep`` optionally filters children.
    """
    out: CandidateSet = {}
    for parent in sorted(prev):
        base = prev[parent]
        for child in kb.adjacency.get((parent, c), ()):
            if child in out or (keep is not None and not keep(child)):
                continue
            out[child] = base.extend(TrajectoryStep(child, c, StepKind.STRUCTURAL, restriction))
    return out


def expand_textual(
    kb: Tgkb,
    scorer: Scorer,
    query: str,
    restriction: str | None,
    c: str,
    t: int,
    *,
    kind: StepKind = StepKind.TEXTUAL,
    path_index: int = 0,
    layer: int = 0,
    keep_unmatched: bool = False,
) -> CandidateSet:
    """Top ``t`` nodes of category ``c`` for the query expanded with ``restriction``.

    Zero- and negative-score nodes are dropped unless ``keep_unmatched``.
    """
    if t <= 0:
        return {}
    scores = scorer.scores(expand_query(query, restriction))
    best = rank_positions(scores, kb.category_positions(c), t)
    if not keep_unmatched:
        best = best[scores[best] > 0]
    out: CandidateSet = {}
    for p in best:
        node = kb.ids[p]
        out[node] = Trajectory((TrajectoryStep(node, c, kind, restriction),), path_index, layer)
    return out


@dataclass
class LayerTrace:
    path_index: int
    layer: int
    category: str
    struct_count: int
    text_count: int
    union_count: int

    def to_json(self) -> str:
        return json.dumps(
            {"path": self.path_index, "layer": self.layer, "category": self.category,
             "struct": self.struct_count, "text": self.text_count, "union": self.union_count}
        )


def _restriction_filter(kb: Tgkb, restriction: str | None):
    if not restriction:
        return None
    needed = token_set(restriction)
    return lambda node: needed <= token_set(kb.nodes[node].document)


def traverse_path(
    kb: Tgkb,
    scorer: Scorer,
    query: str,
    path: ReasoningPath,
    cfg: TraversalConfig = TraversalConfig(),
    path_index: int = 0,
    trace: list | None = None,
) -> CandidateSet:
    first = path.nodes[0]
    if cfg.full_seeding:
        ok = _restriction_filter(kb, first.restriction)
        layer = {
            node: Trajectory((TrajectoryStep(node, first.category, StepKind.SEED, first.restriction),), path_index, 0)
            for node in kb.category_index.get(first.category, ())
            if ok is None or ok(node)
        }
    else:
        layer = expand_textual(
            kb, scorer, query, first.restriction, first.category, cfg.n_seeds,
            kind=StepKind.SEED, path_index=path_index, layer=0, keep_unmatched=cfg.keep_unmatched_text,
        )
    if trace is not None:
        trace.append(LayerTrace(path_index, 0, first.category, 0, len(layer), len(layer)))

    for depth in range(1, len(path)):
        node = path.nodes[depth]
        struct: CandidateSet = {}
        if cfg.use_structural:
            keep = _restriction_filter(kb, node.restriction) if cfg.strict_restrictions else None
            struct = expand_structural(kb, layer, node.category, node.restriction, keep)
        text = expand_textual(
            kb, scorer, query, node.restriction, node.category, cfg.per_layer_text,
            path_index=path_index, layer=depth, keep_unmatched=cfg.keep_unmatched_text,
        )
        layer = merge_candidates(struct, text)
        if trace is not None:
            trace.append(LayerTrace(path_index, depth, node.category, len(struct), len(text), len(layer)))
    return layer


class TraversalResult(NamedTuple):
    candidates: CandidateSet
    fallback: bool
    reason: str = ""


def fallback_candidates(kb: Tgkb, scorer: Scorer, query: str, k: int) -> CandidateSet:
    """Plan-free textual matching over all nodes."""
    scores = scorer.scores(query)
    best = rank_positions(scores, np.arange(len(kb), dtype=np.int64), k)
    out: CandidateSet = {}
    for p in best:
        node = kb.ids[p]
        out[node] = Trajectory((TrajectoryStep(node, kb.nodes[node].category, StepKind.TEXTUAL),), -1, 0)
    return out


def mixed_traverse(
    kb: Tgkb,
    scorer: Scorer,
    query: str,
    plan: PlanOutcome | PlanningGraph,
    cfg: TraversalConfig = TraversalConfig(),
    trace: list | None = None,
) -> TraversalResult:
    """Run every path of ``plan`` and intersect the results.

    An invalid plan falls back to top-``fallback_k`` textual matching over
    all nodes; an empty intersection degrades to the union, and an empty
    union falls back like an invalid plan. All three set the ``fallback``
    flag.
    """
    if isinstance(plan, PlanningGraph):
        plan = PlanOutcome.valid(plan)
    if not plan.is_valid:
        return TraversalResult(fallback_candidates(kb, scorer, query, cfg.fallback_k), True, plan.reason)

    per_path = [
        traverse_path(kb, scorer, query, p, cfg, path_index=i, trace=trace)
        for i, p in enumerate(plan.graph.paths)
    ]
    keys = set(per_path[0])
    for cs in per_path[1:]:
        keys &= set(cs)
    if keys:
        merged = merge_candidates(*({k: cs[k] for k in keys} for cs in per_path))
        return TraversalResult(dict(sorted(merged.items())), False)
    union = merge_candidates(*per_path)
    if union:
        return TraversalResult(dict(sorted(union.items())), True, "empty intersection")
    return TraversalResult(fallback_candidates(kb, scorer, query, cfg.fallback_k), True, "no candidates")


_RAW_NEIGHBORS: "weakref.WeakKeyDictionary[Tgkb, dict[str, set[str]]]" = weakref.WeakKeyDictionary()


def _raw_neighbors(kb: Tgkb) -> dict[str, set[str]]:
    """Neighbor sets rebuilt from the raw edge list, independent of ``kb.adjacency``."""
    raw = _RAW_NEIGHBORS.get(kb)
    if raw is None:
        raw = {}
        for e in kb.edges:
            raw.setdefault(e.src, set()).add(e.dst)
            raw.setdefault(e.dst, set()).add(e.src)
        _RAW_NEIGHBORS[kb] = raw
    return raw


def brute_force_retrieve(kb: Tgkb, plan: PlanningGraph) -> set[str]:
    """Reference answer set by exhaustive walk enumeration.

    For every path, enumerates all KB walks whose node categories follow the
    path and whose restricted nodes contain every restriction token, then
    intersects the per-path endpoint sets. Exponential; for tests and
    answer generation only. Deliberately does not reuse the traversal index.
    """
    raw = _raw_neighbors(kb)

    def admissible(node_id: str, pnode) -> bool:
        rec = kb.nodes[node_id]
        return rec.category == pnode.category and satisfies_restriction(rec.document, pnode.restriction)

    result: set[str] | None = None
    for path in plan.paths:
        ends: set[str] = set()

        def walk(node_id: str, depth: int):
            if depth == len(path.nodes) - 1:
                ends.add(node_id)
                return
            for nxt in raw.get(node_id, ()):
                if admissible(nxt, path.nodes[depth + 1]):
                    walk(nxt, depth + 1)

        for start in kb.category_index.get(path.nodes[0].category, ()):
            if admissible(start, path.nodes[0]):
                walk(start, 0)
        result = ends if result is None else result & ends
    return result or set()


def check_trajectory(kb: Tgkb, traj: Trajectory, path: ReasoningPath | None = None) -> None:
    """Assert structural soundness of one trajectory (used by tests)."""
    for k, step in enumerate(traj.steps):
        assert kb.nodes[step.node].category == step.category, step
        if path is not None:
            assert path.nodes[traj.start_layer + k].category == step.category, (k, step)
        if k and step.kind is StepKind.STRUCTURAL:
            prev = traj.steps[k - 1].node
            assert step.node in kb.adjacency.get((prev, step.category), ()), (prev, step)
        if k and step.kind is StepKind.SEED:
            raise AssertionError("seed step after position 0")


def iter_trace_lines(trace: Iterable[LayerTrace]) -> Iterable[str]:
    for t in trace:
        yield t.to_json()
