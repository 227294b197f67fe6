"""Evaluation harness: metric reports, ablation variants and retrieval-kind ratios."""

from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

from .kb import Tgkb
from .metrics import METRIC_NAMES, query_metrics
from .pipeline import PipelineConfig, Retrieval, Retriever
from .planner import parse_plan
from .queries import QueryRecord
from .reranker import RerankerModel, TrainConfig, train
from .traversal import StepKind

logger = logging.getLogger(__name__)

VARIANTS = ("full", "no_rerank", "no_text", "no_struct")


@dataclass
class MetricsReport:
    per_query: list[dict] = field(default_factory=list)
    fallback_rate: float = 0.0
    label: str = ""

    @property
    def mean(self) -> dict[str, float]:
        if not self.per_query:
            return {m: 0.0 for m in METRIC_NAMES}
        return {m: sum(q[m] for q in self.per_query) / len(self.per_query) for m in METRIC_NAMES}

    @property
    def per_pattern(self) -> dict[str, dict[str, float]]:
        groups: dict[str, list[dict]] = {}
        for q in self.per_query:
            groups.setdefault(q.get("pattern", ""), []).append(q)
        return {
            k: {m: sum(q[m] for q in rows) / len(rows) for m in METRIC_NAMES} | {"n": len(rows)}
            for k, rows in sorted(groups.items())
        }

    def to_dict(self) -> dict:
        return {
            "label": self.label,
            "n_queries": len(self.per_query),
            "mean": self.mean,
            "fallback_rate": self.fallback_rate,
            "per_pattern": self.per_pattern,
            "per_query": self.per_query,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def table(self) -> str:
        rows = [("all", self.mean, len(self.per_query))]
        rows += [(k, v, v["n"]) for k, v in self.per_pattern.items()]
        width = max(len(r[0]) for r in rows) + 2
        lines = ["pattern".ljust(width) + "".join(m.rjust(8) for m in METRIC_NAMES) + "n".rjust(6)]
        for name, vals, n in rows:
            lines.append(name.ljust(width) + "".join(f"{100 * vals[m]:8.2f}" for m in METRIC_NAMES) + f"{n:6d}")
        lines.append(f"fallback rate: {100 * self.fallback_rate:.2f}%")
        return "\n".join(lines)


def _pattern(q: QueryRecord) -> str:
    if q.gold_plan is None:
        return ""
    outcome = parse_plan(q.gold_plan)
    return outcome.graph.signature() if outcome.is_valid else ""


def run_queries(retriever: Retriever, queries: Sequence[QueryRecord], workers: int = 1) -> list[Retrieval]:
    if workers <= 1:
        return [retriever.retrieve(q) for q in queries]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(retriever.retrieve, queries))


def report_from(queries: Sequence[QueryRecord], results: Sequence[Retrieval], label: str = "") -> MetricsReport:
    rows = []
    for q, r in zip(queries, results):
        row = {"id": q.id, "pattern": _pattern(q), "fallback": r.fallback}
        row.update(query_metrics(r.ids, q.answers))
        rows.append(row)
    rate = sum(r.fallback for r in results) / len(results) if results else 0.0
    return MetricsReport(rows, rate, label)


def evaluate(
    config: PipelineConfig,
    kb: Tgkb,
    queries: Sequence[QueryRecord],
    model: RerankerModel | None = None,
    workers: int = 1,
    label: str = "",
    **retriever_kw,
) -> MetricsReport:
    """Run plan, traverse and rank for every query and score the rankings."""
    if config.ranker == "rerank" and model is None:
        raise ValueError("missing model: reranking requires a trained reranker")
    retriever = Retriever(kb, config, model, **retriever_kw)
    results = run_queries(retriever, queries, workers)
    return report_from(queries, results, label)


def variant_config(base: PipelineConfig, variant: str) -> PipelineConfig:
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}")
    t = base.traversal
    if variant == "full":
        return replace(base, ranker="rerank")
    if variant == "no_rerank":
        return replace(base, ranker="initial")
    if variant == "no_text":
        return replace(base, ranker="rerank", traversal=replace(t, per_layer_text=0))
    return replace(base, ranker="rerank", traversal=replace(t, use_structural=False))


def train_model(
    kb: Tgkb,
    config: PipelineConfig,
    train_queries: Sequence[QueryRecord],
    features: Iterable[str] = ("tf", "sf", "ti"),
    train_cfg: TrainConfig = TrainConfig(),
    hidden: int = 128,
    fallback_config: PipelineConfig | None = None,
    **retriever_kw,
) -> tuple[RerankerModel, list[float]]:
    """Train a reranker on candidate pools produced under ``config``.

    When those pools hold only one label (e.g. a variant that never reaches
    an answer), the examples are taken from ``fallback_config`` instead.
    """
    examples = Retriever(kb, config, None, **retriever_kw).training_examples(train_queries)
    if {e.label for e in examples} != {0, 1} and fallback_config is not None:
        logger.warning("single-label training pools; using the fallback configuration's pools")
        examples = Retriever(kb, fallback_config, None, **retriever_kw).training_examples(train_queries)
    model = RerankerModel(tuple(sorted(kb.schema)), hidden=hidden, features=tuple(features), seed=train_cfg.seed)
    return train(model, examples, train_cfg)


def ablate(
    variant: str,
    kb: Tgkb,
    train_queries: Sequence[QueryRecord],
    eval_queries: Sequence[QueryRecord],
    base: PipelineConfig = PipelineConfig(),
    features: Iterable[str] = ("tf", "sf", "ti"),
    train_cfg: TrainConfig = TrainConfig(),
    workers: int = 1,
    **retriever_kw,
) -> MetricsReport:
    """Evaluate one pipeline variant, training its reranker on ``train_queries`` when needed."""
    cfg = variant_config(base, variant)
    features = tuple(features)
    model = None
    if cfg.ranker == "rerank":
        full = variant_config(base, "full")
        model, _ = train_model(kb, cfg, train_queries, features, train_cfg, fallback_config=full, **retriever_kw)
    label = variant if set(features) == {"tf", "sf", "ti"} else f"{variant}[{'+'.join(features)}]"
    return evaluate(cfg, kb, eval_queries, model, workers, label, **retriever_kw)


@dataclass
class RatioReport:
    """Shares of structurally vs textually retrieved results.

    ``None`` marks a ratio whose denominator is empty. The information
    ratios come from restriction word counts of the generating templates
    and only approximate how much a query's requirements are relational
    versus textual.
    """

    structure_all: float | None
    text_all: float | None
    structure_answer: float | None
    text_answer: float | None
    structure_info: float | None = None
    text_info: float | None = None

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def _is_structural(kind: StepKind) -> bool:
    return kind is StepKind.STRUCTURAL


def ratio_analysis(
    results: Sequence[Retrieval],
    answers: Sequence[Iterable[str]],
    info_words: Sequence[tuple[int, int]] | None = None,
    top: int = 20,
) -> RatioReport:
    """Fractions of top-``top`` results (and of retrieved answers) by final-step kind.

    Fallback queries are left out. ``info_words`` holds per-query
    (structure words, text words) counts for the information ratios.
    """
    s_all = t_all = s_ans = t_ans = 0
    for r, ans in zip(results, answers):
        if r.fallback:
            continue
        ans = set(ans)
        for c in r.ranked[:top]:
            if c.trajectory is None:
                continue
            structural = _is_structural(c.trajectory.final.kind)
            s_all += structural
            t_all += not structural
            if c.node in ans:
                s_ans += structural
                t_ans += not structural

    def frac(a, total):
        return a / total if total else None

    out = RatioReport(
        frac(s_all, s_all + t_all), frac(t_all, s_all + t_all),
        frac(s_ans, s_ans + t_ans), frac(t_ans, s_ans + t_ans),
    )
    if info_words:
        s = sum(w[0] for w in info_words)
        t = sum(w[1] for w in info_words)
        out.structure_info, out.text_info = frac(s, s + t), frac(t, s + t)
    return out
