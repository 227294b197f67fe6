"""Plan, traverse, rerank: the end-to-end retriever."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

from .kb import Tgkb
from .llm import Demonstration, EndpointConfig, plan_llm
from .planner import DEFAULT_MAX_PATH_LEN, PlanOutcome, TemplateRule, parse_plan, plan_template, validate_plan
from .queries import QueryRecord
from .reranker import PoolEntry, RerankerModel, TrainExample, extract_features, rerank
from .scoring import HashedEmbeddingScorer, make_scorer
from .traversal import Trajectory, TraversalConfig, brute_force_retrieve, mixed_traverse

logger = logging.getLogger(__name__)

PLANNER_MODES = ("gold", "template", "llm")
RANKERS = ("rerank", "initial", "oracle")


@dataclass(frozen=True)
class PipelineConfig:
    traversal: TraversalConfig = TraversalConfig()
    scorer: str = "bm25"
    k1: float = 1.2
    b: float = 0.75
    hashed_dim: int = 256
    hashed_seed: int = 0
    planner: str = "gold"
    ranker: str = "rerank"
    max_path_len: int = DEFAULT_MAX_PATH_LEN
    top_k: int = 100
    negatives_per_positive: int = 5

    def __post_init__(self):
        if self.planner not in PLANNER_MODES:
            raise ValueError(f"planner must be one of {PLANNER_MODES}")
        if self.ranker not in RANKERS:
            raise ValueError(f"ranker must be one of {RANKERS}")


@dataclass
class RankedCandidate:
    node: str
    score: float
    initial_score: float
    trajectory: Trajectory | None

    def to_dict(self) -> dict:
        return {
            "node": self.node,
            "score": self.score,
            "initial_score": self.initial_score,
            "trajectory": self.trajectory.to_dict() if self.trajectory else None,
        }


@dataclass
class Retrieval:
    query: str
    ranked: list[RankedCandidate]
    fallback: bool
    plan: PlanOutcome
    reason: str = ""
    trace: list = field(default_factory=list)

    @property
    def ids(self) -> list[str]:
        return [r.node for r in self.ranked]


class Retriever:
    """Holds the KB, its scorers, the planner sources and an optional model.

    ``scorer`` drives textual matching and the textual fingerprint; the
    hashed-embedding ``semantic`` scorer provides the initial ranking score
    used to cut the rerank pool and as the no-rerank ranking.
    """

    def __init__(
        self,
        kb: Tgkb,
        config: PipelineConfig = PipelineConfig(),
        model: RerankerModel | None = None,
        rules: Sequence[TemplateRule] = (),
        endpoint: EndpointConfig | None = None,
        demos: Sequence[Demonstration] = (),
    ):
        self.kb = kb
        self.config = config
        self.model = model
        self.rules = list(rules)
        self.endpoint = endpoint
        self.demos = list(demos)
        self.scorer = make_scorer(
            kb, config.scorer, k1=config.k1, b=config.b, dim=config.hashed_dim, seed=config.hashed_seed
        )
        if config.scorer == "hashed":
            self.semantic = self.scorer
        else:
            self.semantic = HashedEmbeddingScorer(kb, dim=config.hashed_dim, seed=config.hashed_seed)

    def plan(self, record: QueryRecord | str) -> PlanOutcome:
        if isinstance(record, str):
            record = QueryRecord("", record)
        mode = self.config.planner
        outcome = None
        if mode == "gold" and record.gold_plan is not None:
            outcome = parse_plan(record.gold_plan)
        elif mode in ("gold", "template") and self.rules:
            outcome = plan_template(record.text, self.rules)
        elif self.endpoint is not None:
            outcome = plan_llm(record.text, self.endpoint, sorted(self.kb.schema), self.demos)
        if outcome is None:
            return PlanOutcome.invalid("no planner available")
        return self.check_plan(outcome)

    def check_plan(self, outcome: PlanOutcome) -> PlanOutcome:
        """Validate a parsed plan against the KB schema and the path length cap."""
        if not outcome.is_valid:
            return outcome
        checked = validate_plan(outcome.graph, self.kb, self.config.max_path_len)
        return checked if not checked.is_valid else PlanOutcome.valid(outcome.graph, raw=outcome.raw)

    def candidate_pool(self, query: str, plan: PlanOutcome, trace: list | None = None):
        """Traversal candidates cut to the ``rerank_pool`` best by initial score."""
        result = mixed_traverse(self.kb, self.scorer, query, plan, self.config.traversal, trace)
        sem = self.semantic.scores(query)
        pos = self.kb.position
        items = [(node, traj, float(sem[pos[node]])) for node, traj in result.candidates.items()]
        items.sort(key=lambda t: (-t[2], t[0]))
        return items[: self.config.traversal.rerank_pool], result

    def pool_entries(self, query: str, items) -> list[PoolEntry]:
        return [PoolEntry(node, extract_features(traj, query, self.scorer, init), init) for node, traj, init in items]

    def retrieve(self, query: QueryRecord | str, plan: PlanOutcome | None = None, k: int | None = None,
                 trace: list | None = None) -> Retrieval:
        record = QueryRecord("", query) if isinstance(query, str) else query
        plan = self.plan(record) if plan is None else self.check_plan(plan)
        k = k or self.config.top_k
        if self.config.ranker == "oracle":
            if not plan.is_valid:
                return Retrieval(record.text, [], True, plan, plan.reason)
            hits = sorted(brute_force_retrieve(self.kb, plan.graph))
            return Retrieval(record.text, [RankedCandidate(n, 1.0, 1.0, None) for n in hits[:k]], False, plan)

        items, result = self.candidate_pool(record.text, plan, trace)
        trajs = {node: traj for node, traj, _ in items}
        if self.config.ranker == "initial":
            ranked = [RankedCandidate(n, s, s, t) for n, t, s in items[:k]]
        else:
            if self.model is None:
                raise ValueError("missing model: reranking requires a trained reranker")
            order = rerank(self.model, self.pool_entries(record.text, items), k)
            ranked = [RankedCandidate(r.node, r.p1, r.initial_score, trajs[r.node]) for r in order]
        return Retrieval(record.text, ranked, result.fallback, plan, result.reason, trace if trace is not None else [])

    def training_examples(self, queries: Sequence[QueryRecord]) -> list[TrainExample]:
        """Pool positives plus up to ``negatives_per_positive`` times as many hardest negatives."""
        out: list[TrainExample] = []
        for q in queries:
            plan = self.plan(q)
            items, _ = self.candidate_pool(q.text, plan)
            pos = [it for it in items if it[0] in q.answers]
            if not pos:
                continue
            neg = [it for it in items if it[0] not in q.answers][: self.config.negatives_per_positive * len(pos)]
            for node, traj, init in pos + neg:
                feats = extract_features(traj, q.text, self.scorer, init)
                out.append(TrainExample(q.id, feats, int(node in q.answers), node))
        return out

