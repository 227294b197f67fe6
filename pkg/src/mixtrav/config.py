"""Engine configuration: one JSON file plus dotted command-line overrides."""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field, fields, is_dataclass
from pathlib import Path
from typing import Any

from .llm import EndpointConfig
from .pipeline import PLANNER_MODES, RANKERS, PipelineConfig
from .reranker import FEATURE_GROUPS, TrainConfig
from .traversal import TraversalConfig


class ConfigError(ValueError):
    """Bad configuration; the CLI maps it to exit code 2."""


@dataclass
class KbSection:
    nodes: str | None = None
    edges: str | None = None


@dataclass
class ScorerSection:
    kind: str = "bm25"
    k1: float = 1.2
    b: float = 0.75
    dim: int = 256
    seed: int = 0


@dataclass
class TraversalSection:
    n_seeds: int = 5
    per_layer_text: int = 10
    fallback_k: int = 20
    rerank_pool: int = 100


@dataclass
class EndpointSection:
    base_url: str | None = None
    model: str | None = None
    api_key_env: str = "PLANNER_API_KEY"
    timeout: float = 30.0


@dataclass
class PlannerSection:
    mode: str = "gold"
    rules: str | None = None
    demos: str | None = None
    max_path_len: int = 3
    endpoint: EndpointSection = field(default_factory=EndpointSection)


@dataclass
class RerankerSection:
    ranker: str = "rerank"
    checkpoint: str | None = None
    features: list = field(default_factory=lambda: list(FEATURE_GROUPS))
    hidden: int = 128
    epochs: int = 100
    learning_rate: float = 1e-2
    batch_size: int = 32
    negatives_per_positive: int = 5


@dataclass
class SynthSection:
    total_nodes: int | None = None
    n_queries: int = 200
    text_informativeness: float = 0.3


@dataclass
class EngineConfig:
    kb: KbSection = field(default_factory=KbSection)
    queries: str | None = None
    train_queries: str | None = None
    scorer: ScorerSection = field(default_factory=ScorerSection)
    traversal: TraversalSection = field(default_factory=TraversalSection)
    planner: PlannerSection = field(default_factory=PlannerSection)
    reranker: RerankerSection = field(default_factory=RerankerSection)
    synth: SynthSection = field(default_factory=SynthSection)
    top_k: int = 100
    seed: int = 0
    workers: int = 1
    out: str | None = None

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def validate(self) -> None:
        if self.planner.mode not in PLANNER_MODES:
            raise ConfigError(f"planner.mode must be one of {', '.join(PLANNER_MODES)}")
        if self.reranker.ranker not in RANKERS:
            raise ConfigError(f"reranker.ranker must be one of {', '.join(RANKERS)}")
        if self.scorer.kind not in ("bm25", "hashed"):
            raise ConfigError("scorer.kind must be bm25 or hashed")
        bad = set(self.reranker.features) - set(FEATURE_GROUPS)
        if bad or not self.reranker.features:
            raise ConfigError(f"reranker.features must be a non-empty subset of {list(FEATURE_GROUPS)}")
        if self.planner.mode == "llm" and not (self.planner.endpoint.base_url and self.planner.endpoint.model):
            raise ConfigError("planner.mode llm needs planner.endpoint.base_url and planner.endpoint.model")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        try:
            self.pipeline()
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    # -- derived objects --------------------------------------------------

    def pipeline(self) -> PipelineConfig:
        t = self.traversal
        return PipelineConfig(
            traversal=TraversalConfig(t.n_seeds, t.per_layer_text, t.fallback_k, t.rerank_pool),
            scorer=self.scorer.kind,
            k1=self.scorer.k1,
            b=self.scorer.b,
            hashed_dim=self.scorer.dim,
            hashed_seed=self.scorer.seed,
            planner=self.planner.mode,
            ranker=self.reranker.ranker,
            max_path_len=self.planner.max_path_len,
            top_k=self.top_k,
            negatives_per_positive=self.reranker.negatives_per_positive,
        )

    def train_config(self) -> TrainConfig:
        r = self.reranker
        return TrainConfig(r.epochs, r.learning_rate, r.batch_size, self.seed)

    def endpoint(self) -> EndpointConfig | None:
        e = self.planner.endpoint
        if not (e.base_url and e.model):
            return None
        return EndpointConfig(e.base_url, e.model, e.api_key_env, e.timeout)


def _build(cls, data: dict, where: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{where or 'config'} must be a JSON object")
    known = {f.name: f for f in fields(cls)}
    kwargs = {}
    for key, value in data.items():
        if key not in known:
            raise ConfigError(f"unknown config key {where + key!r}")
        default = getattr(cls(), key)
        if is_dataclass(default):
            kwargs[key] = _build(type(default), value, f"{where}{key}.")
        else:
            kwargs[key] = value
    return cls(**kwargs)


def config_from_dict(data: dict) -> EngineConfig:
    return _build(EngineConfig, data, "")


def _parse_value(text: str) -> Any:
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_override(data: dict, assignment: str) -> None:
    """Apply one ``dotted.key=value`` override to a raw config dict; values are JSON when they parse."""
    key, sep, value = assignment.partition("=")
    if not sep or not key:
        raise ConfigError(f"override {assignment!r} is not of the form key=value")
    parts = key.split(".")
    node = data
    for p in parts[:-1]:
        node = node.setdefault(p, {})
        if not isinstance(node, dict):
            raise ConfigError(f"override {key!r} descends into a non-object")
    node[parts[-1]] = _parse_value(value)


_PATH_KEYS = (
    ("kb", "nodes"), ("kb", "edges"), ("queries",), ("train_queries",),
    ("planner", "rules"), ("planner", "demos"), ("reranker", "checkpoint"), ("out",),
)


def _resolve_paths(cfg: EngineConfig, base: Path) -> EngineConfig:
    for key in _PATH_KEYS:
        holder = cfg
        for k in key[:-1]:
            holder = getattr(holder, k)
        value = getattr(holder, key[-1])
        if value and not os.path.isabs(value):
            setattr(holder, key[-1], str(base / value))
    return cfg


def load_config(path=None, overrides=(), **top_level) -> EngineConfig:
    """Read ``path`` (if any), apply ``overrides`` and non-None ``top_level`` values, validate.

    Relative paths in the file are taken relative to the file's directory;
    paths given as overrides are taken relative to the working directory.
    """
    data: dict = {}
    if path is not None:
        try:
            with open(path, encoding="utf-8") as fh:
                data = json.load(fh)
        except FileNotFoundError:
            raise ConfigError(f"missing input: config file {path}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {path} is not valid JSON: {exc}") from None
    try:
        cfg = config_from_dict(data)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None
    if path is not None:
        cfg = _resolve_paths(cfg, Path(path).resolve().parent)
    raw = cfg.to_dict()
    for item in overrides:
        apply_override(raw, item)
    for k, v in top_level.items():
        if v is not None:
            raw[k] = v
    cfg = config_from_dict(raw)
    cfg.validate()
    return cfg

