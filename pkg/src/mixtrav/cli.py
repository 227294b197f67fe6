"""Command-line interface: ``mixtrav <command> [--config FILE] [--set key=value ...]``.

Commands: build, plan, retrieve, train, eval, ablate, synth. Exit codes
are 0 on success, 1 on runtime failure and 2 on usage or config errors
(including missing input files).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

from .config import ConfigError, EngineConfig, load_config
from .evaluation import VARIANTS, ablate, evaluate, train_model
from .kb import KbError, Tgkb, dump_edges, dump_nodes, load_kb_files, validate_kb
from .llm import Demonstration
from .pipeline import Retriever
from .planner import load_rules, serialize_plan
from .queries import QueryRecord, dump_queries, load_queries
from .reranker import RerankerModel
from .scoring import build_bm25
from .synth import SynthConfig, synth_generate
from .traversal import iter_trace_lines

logger = logging.getLogger("mixtrav")

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2


class MissingInput(ConfigError):
    pass


def _require_file(path: str | None, what: str) -> str:
    if not path:
        raise MissingInput(f"missing input: no {what} configured")
    if not os.path.isfile(path):
        raise MissingInput(f"missing input: {what} {path} does not exist")
    return path


def _out_dir(cfg: EngineConfig) -> Path:
    out = Path(cfg.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def _load_kb(cfg: EngineConfig) -> Tgkb:
    nodes = _require_file(cfg.kb.nodes, "nodes file")
    edges = _require_file(cfg.kb.edges, "edges file")
    return load_kb_files(nodes, edges)


def _load_queries(path: str | None, what: str = "queries file") -> list[QueryRecord]:
    return load_queries(_require_file(path, what))


def _retriever_kw(cfg: EngineConfig) -> dict:
    kw: dict = {"endpoint": cfg.endpoint()}
    if cfg.planner.rules:
        with open(_require_file(cfg.planner.rules, "template rules file"), encoding="utf-8") as fh:
            kw["rules"] = load_rules(json.load(fh))
    if cfg.planner.demos:
        demos = []
        with open(_require_file(cfg.planner.demos, "demonstrations file"), encoding="utf-8") as fh:
            for line in fh:
                if line.strip():
                    d = json.loads(line)
                    demos.append(Demonstration(d["question"], d["metapath"], d.get("restriction", {})))
        kw["demos"] = demos
    return kw


def _load_model(cfg: EngineConfig) -> RerankerModel | None:
    if cfg.reranker.ranker != "rerank":
        return None
    if not cfg.reranker.checkpoint:
        raise ConfigError("missing model: set reranker.checkpoint or use reranker.ranker=initial")
    return RerankerModel.load(_require_file(cfg.reranker.checkpoint, "reranker checkpoint"))


def _single_query(args) -> list[QueryRecord] | None:
    if args.query is None:
        return None
    return [QueryRecord(args.query_id, args.query, frozenset(), args.plan)]


# -- commands -----------------------------------------------------------------


def cmd_build(cfg: EngineConfig, args) -> int:
    kb = _load_kb(cfg)
    out = _out_dir(cfg)
    _write(out / "kb" / "nodes.jsonl", dump_nodes(kb))
    _write(out / "kb" / "edges.jsonl", dump_edges(kb))
    index = build_bm25(kb, cfg.scorer.k1, cfg.scorer.b)
    (out / "index").mkdir(parents=True, exist_ok=True)
    (out / "index" / "bm25.bin").write_bytes(index.state_bytes())
    report = validate_kb(kb)
    _write(out / "validation.json", json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n")
    print(f"built {len(kb)} nodes, {len(kb.edges)} edges into {out}")
    if report.isolated or report.empty_documents:
        print(f"warning: {len(report.isolated)} isolated nodes, {len(report.empty_documents)} empty documents")
    return EXIT_OK


def cmd_plan(cfg: EngineConfig, args) -> int:
    kb = _load_kb(cfg)
    queries = _single_query(args) or _load_queries(cfg.queries)
    retriever = Retriever(kb, replace(cfg.pipeline(), ranker="initial"), None, **_retriever_kw(cfg))
    lines = []
    for q in queries:
        outcome = retriever.plan(q)
        row = {"id": q.id, "valid": outcome.is_valid}
        if outcome.is_valid:
            row["plan"] = serialize_plan(outcome.graph)
        else:
            row["reason"] = outcome.reason
        lines.append(json.dumps(row, ensure_ascii=False))
    _emit(cfg, "plans.jsonl", lines)
    return EXIT_OK


def _emit(cfg: EngineConfig, name: str, lines: list[str]) -> None:
    text = "".join(line + "\n" for line in lines)
    if cfg.out:
        _write(_out_dir(cfg) / name, text)
    else:
        sys.stdout.write(text)


def cmd_retrieve(cfg: EngineConfig, args) -> int:
    kb = _load_kb(cfg)
    queries = _single_query(args) or _load_queries(cfg.queries)
    retriever = Retriever(kb, cfg.pipeline(), _load_model(cfg), **_retriever_kw(cfg))
    k = args.k or cfg.top_k
    lines, trace_lines = [], []
    for q in queries:
        trace: list = [] if args.trace else None
        r = retriever.retrieve(q, k=k, trace=trace)
        row = {
            "id": q.id,
            "query": q.text,
            "fallback": r.fallback,
            "reason": r.reason,
            "plan": serialize_plan(r.plan.graph) if r.plan.is_valid else None,
            "ranked": [c.to_dict() for c in r.ranked],
        }
        lines.append(json.dumps(row, ensure_ascii=False))
        if trace is not None:
            trace_lines += [json.dumps({"id": q.id, **json.loads(t)}) for t in iter_trace_lines(trace)]
    _emit(cfg, "rankings.jsonl", lines)
    if args.trace:
        _write(Path(args.trace), "".join(t + "\n" for t in trace_lines))
    return EXIT_OK


def cmd_train(cfg: EngineConfig, args) -> int:
    kb = _load_kb(cfg)
    queries = _load_queries(cfg.train_queries or cfg.queries, "training queries file")
    model, curve = train_model(
        kb, replace(cfg.pipeline(), ranker="rerank"), queries, tuple(cfg.reranker.features),
        cfg.train_config(), hidden=cfg.reranker.hidden, **_retriever_kw(cfg),
    )
    out = _out_dir(cfg)
    path = Path(cfg.reranker.checkpoint) if cfg.reranker.checkpoint else out / "reranker.json"
    path.parent.mkdir(parents=True, exist_ok=True)
    model.save(path)
    _write(out / "train_curve.json", json.dumps({"loss": curve}) + "\n")
    print(f"trained reranker: loss {curve[0]:.4f} -> {curve[-1]:.4f}; checkpoint {path}")
    return EXIT_OK


def cmd_eval(cfg: EngineConfig, args) -> int:
    kb = _load_kb(cfg)
    queries = _load_queries(cfg.queries)
    report = evaluate(
        cfg.pipeline(), kb, queries, _load_model(cfg), cfg.workers, cfg.reranker.ranker, **_retriever_kw(cfg)
    )
    out = _out_dir(cfg)
    _write(out / "report.json", report.to_json() + "\n")
    _write(out / "report.txt", report.table() + "\n")
    print(report.table())
    return EXIT_OK


def cmd_ablate(cfg: EngineConfig, args) -> int:
    kb = _load_kb(cfg)
    eval_queries = _load_queries(cfg.queries)
    train_queries = _load_queries(cfg.train_queries or cfg.queries, "training queries file")
    masks = [tuple(m.split("+")) for m in args.masks] if args.masks else [tuple(cfg.reranker.features)]
    out = _out_dir(cfg) / "ablation"
    summary = {}
    for variant in args.variants or VARIANTS:
        for mask in masks:
            report = ablate(
                variant, kb, train_queries, eval_queries, replace(cfg.pipeline(), ranker="rerank"),
                mask, cfg.train_config(), cfg.workers, **_retriever_kw(cfg),
            )
            name = f"{variant}__{'+'.join(sorted(mask))}"
            _write(out / f"{name}.json", report.to_json() + "\n")
            summary[name] = report.mean | {"fallback_rate": report.fallback_rate}
            print(f"{name}: " + "  ".join(f"{k} {100 * v:.2f}" for k, v in report.mean.items()))
    _write(out / "summary.json", json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return EXIT_OK


def cmd_synth(cfg: EngineConfig, args) -> int:
    s = cfg.synth
    scfg = SynthConfig(
        n_queries=s.n_queries, text_informativeness=s.text_informativeness, seed=cfg.seed
    )
    if s.total_nodes:
        scfg = scfg.scaled(s.total_nodes)
    try:
        scfg.validate()
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    ds = synth_generate(scfg)
    out = _out_dir(cfg)
    _write(out / "kb" / "nodes.jsonl", dump_nodes(ds.kb))
    _write(out / "kb" / "edges.jsonl", dump_edges(ds.kb))
    _write(out / "queries.jsonl", dump_queries(ds.queries))
    info = {qid: vars(i) for qid, i in sorted(ds.info.items())}
    _write(out / "query_info.json", json.dumps(info, indent=2, sort_keys=True) + "\n")
    print(f"generated {len(ds.kb)} nodes, {len(ds.kb.edges)} edges, {len(ds.queries)} queries into {out}")
    return EXIT_OK


COMMANDS = {
    "build": cmd_build,
    "plan": cmd_plan,
    "retrieve": cmd_retrieve,
    "train": cmd_train,
    "eval": cmd_eval,
    "ablate": cmd_ablate,
    "synth": cmd_synth,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="engine config JSON file")
    common.add_argument("--workers", type=int, help="parallel queries (default from config)")
    common.add_argument("--seed", type=int, help="master seed (default from config)")
    common.add_argument("--out", help="output directory")
    common.add_argument(
        "--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
        help="override a config value by dotted path, e.g. traversal.per_layer_text=0",
    )
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="mixtrav", description="Mixed structural/textual retrieval over text-rich graph KBs.")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("build", parents=[common], help="normalize a KB and write index artifacts")
    for name, help_text in (("plan", "produce planning graphs"), ("retrieve", "rank candidates for queries")):
        p = sub.add_parser(name, parents=[common], help=help_text)
        p.add_argument("--query", help="single query text (otherwise the configured queries file)")
        p.add_argument("--query-id", default="q0")
        p.add_argument("--plan", help="gold plan text for --query")
        if name == "retrieve":
            p.add_argument("-k", type=int, help="number of results (default top_k)")
            p.add_argument("--trace", help="write per-layer traversal trace JSONL here")
    sub.add_parser("train", parents=[common], help="train the reranker")
    sub.add_parser("eval", parents=[common], help="evaluate on the configured queries")
    p = sub.add_parser("ablate", parents=[common], help="run ablation variants")
    p.add_argument("--variants", nargs="+", choices=VARIANTS)
    p.add_argument("--masks", nargs="+", help="feature masks such as tf or tf+sf+ti")
    sub.add_parser("synth", parents=[common], help="generate a synthetic KB and queries")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = load_config(args.config, args.overrides, workers=args.workers, seed=args.seed, out=args.out)
        if args.command == "ablate" and args.masks:
            for m in args.masks:
                if not set(m.split("+")) <= {"tf", "sf", "ti"}:
                    raise ConfigError(f"bad feature mask {m!r}")
        code = COMMANDS[args.command](cfg, args)
        sys.stdout.flush()
        return code
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except BrokenPipeError:
        # downstream reader (e.g. head) went away; silence the flush at exit
        os.dup2(os.open(os.devnull, os.O_WRONLY), sys.stdout.fileno())
        return 0
    except (KbError, ValueError, KeyError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
