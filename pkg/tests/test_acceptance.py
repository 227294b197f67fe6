"""Acceptance suite: one or more tests per criterion, summarised at the end of the run."""

import statistics
import time

import numpy as np
import pytest

from conftest import CRITERION_NOTES, F1_NODES, WORKED_PLAN, WORKED_QUERY, f1_kb
from oracles import central_difference, hit, okapi, recall, reciprocal_rank, relative_error, separable_queries
from mixtrav.evaluation import ablate, ratio_analysis, run_queries, train_model
from mixtrav.kb import EdgeRecord, NodeRecord, Tgkb
from mixtrav.metrics import hit_at_k, mrr, recall_at_k
from mixtrav.pipeline import PipelineConfig, Retriever
from mixtrav.planner import parse_plan
from mixtrav.reranker import (
    PAD_CATEGORY, TI_TOKENS, RerankerModel, TrainConfig, TrainExample, TrajectoryFeatures, loss_and_grad,
    predict_proba, train,
)
from mixtrav.scoring import bm25_score, build_bm25
from mixtrav.synth import SynthConfig, synth_generate
from mixtrav.traversal import TraversalConfig, brute_force_retrieve, mixed_traverse

criterion = pytest.mark.criterion


def note(n, text):
    CRITERION_NOTES[n] = text


@criterion(1, "structural-only traversal equals the brute-force oracle")
def test_traversal_oracle_equivalence():
    start = time.perf_counter()
    compared = 0
    for s in range(50):
        ds = synth_generate(SynthConfig(n_queries=10, seed=s).scaled(490))
        assert len(ds.kb.ids) <= 500
        idx = build_bm25(ds.kb)
        for q in ds.queries:
            g = parse_plan(q.gold_plan).graph
            res = mixed_traverse(ds.kb, idx, q.text, g, TraversalConfig.structural_only())
            assert set(res.candidates) == brute_force_retrieve(ds.kb, g)
            compared += 1
    elapsed = time.perf_counter() - start
    note(1, f"{compared} queries, {elapsed:.1f}s")
    assert compared == 500
    assert elapsed < 30


@criterion(2, "F1 gold plan retrieves exactly {P1}")
def test_f1_end_to_end():
    kb = f1_kb()
    res = mixed_traverse(kb, build_bm25(kb), WORKED_QUERY, parse_plan(WORKED_PLAN))
    assert set(res.candidates) == {"P1"} and not res.fallback
    out = Retriever(kb, PipelineConfig(ranker="initial")).retrieve(WORKED_QUERY, parse_plan(WORKED_PLAN))
    assert out.ids == ["P1"]
    note(2, "intersection {P1}")


@criterion(3, "BM25 matches an independent Okapi evaluation to 1e-9")
def test_bm25_against_okapi():
    kb = f1_kb()
    idx = build_bm25(kb)
    docs = {i: t for i, _, t in F1_NODES}
    worst = 0.0
    for q in ["stellar", "stellar populations", "point park university", WORKED_QUERY, "graph neural", "none"]:
        for node in kb.ids:
            worst = max(worst, abs(bm25_score(idx, q, node) - okapi(docs, q, node)))
    # hand-evaluated: ln((6-2+0.5)/(2+0.5)+1) / (1 + 1.2*(0.25 + 0.75*5/(20/6)))
    assert abs(bm25_score(idx, "stellar", "P1") - 0.38853562912496534) <= 1e-9
    note(3, f"max abs diff {worst:.1e}")
    assert worst <= 1e-9


def _random_model(rng):
    cats = tuple(sorted(rng.choice(["Author", "Paper", "Institution", "Field-of-Study", "Venue"], 3, replace=False)))
    groups = ("tf", "sf", "ti")
    features = tuple(g for g in groups if rng.random() < 0.7) or ("tf",)
    m = RerankerModel(
        cats, dim=int(rng.integers(2, 7)), hidden=int(rng.integers(2, 6)), features=features,
        seed=int(rng.integers(1000)),
        tf_shift=tuple(float(v) for v in rng.normal(0, 0.3, 4)),
        tf_scale=tuple(float(v) for v in rng.uniform(0.5, 2.0, 4)),
    )
    for p in m.params.values():
        p[...] = rng.normal(0, 0.5, p.shape)
    pool = list(cats) + [PAD_CATEGORY, "Unknown"]
    examples = [
        TrainExample("q", TrajectoryFeatures(
            tuple(float(v) for v in rng.normal(0, 1, 4)),
            tuple(str(c) for c in rng.choice(pool, 3)),
            tuple(str(t) for t in rng.choice(TI_TOKENS, 3)),
        ), int(rng.integers(2)))
        for _ in range(int(rng.integers(1, 6)))
    ]
    return m, examples


@criterion(4, "analytic gradients match central differences (rel err <= 1e-4)")
def test_gradient_checks():
    rng = np.random.default_rng(2024)
    worst = 0.0
    seen = set()
    for _ in range(20):
        m, ex = _random_model(rng)
        _, grads = loss_and_grad(m, ex)
        for name, arr in m.params.items():
            numeric = np.zeros_like(arr)
            for idx in np.ndindex(arr.shape):
                numeric[idx] = central_difference(lambda: loss_and_grad(m, ex)[0], arr, idx)
            if name in m.frozen():
                assert np.all(grads[name] == 0)
                continue
            seen.add(name)
            worst = max(worst, relative_error(grads[name], numeric))
    note(4, f"worst {worst:.1e} over {len(seen)} parameter groups")
    # every parameter group was exercised by at least one configuration
    assert seen == set(RerankerModel(("A",)).params)
    assert worst <= 1e-4


@criterion(5, "reranker separates the constructed dataset (held-out Hit@1 >= 0.95)")
def test_reranker_separability():
    train_set = separable_queries(40, seed=10, prefix="t")
    held = separable_queries(20, seed=11, prefix="h")
    assert (len(train_set), len(held)) == (200, 100)
    start = time.perf_counter()
    model, _ = train(RerankerModel(("Author", "Institution", "Paper")), train_set, TrainConfig(epochs=100))
    elapsed = time.perf_counter() - start
    p = predict_proba(model, [e.features for e in held])
    hits = []
    for g in range(20):
        rows = list(range(5 * g, 5 * g + 5))
        best = max(rows, key=lambda r: p[r])
        hits.append(held[best].label == 1)
    h1 = float(np.mean(hits))
    note(5, f"Hit@1 {h1:.2f}, {elapsed:.1f}s")
    assert h1 >= 0.95 and elapsed < 10


@pytest.fixture(scope="module")
def benchmark():
    out = []
    for seed in range(5):
        ds = synth_generate(SynthConfig(seed=seed, n_queries=200))
        out.append((ds, ds.queries[:100], ds.queries[100:]))
    return out


@criterion(6, "ablation trend: full >= no_rerank; full > no_struct on structure-heavy data")
def test_ablation_rerank_trend(benchmark):
    full, plain = [], []
    for ds, tr, ev in benchmark:
        assert len(ds.kb.ids) == 10_000 and len(ds.queries) == 200
        full.append(ablate("full", ds.kb, tr, ev).mean["MRR"])
        plain.append(ablate("no_rerank", ds.kb, tr, ev).mean["MRR"])
    note(6, f"MRR full {statistics.mean(full):.3f} vs no_rerank {statistics.mean(plain):.3f}")
    assert statistics.mean(full) >= statistics.mean(plain)


@criterion(6, "ablation trend: full >= no_rerank; full > no_struct on structure-heavy data")
def test_ablation_structure_trend():
    ds = synth_generate(SynthConfig(seed=0, n_queries=200, text_informativeness=0.0))
    tr, ev = ds.queries[:100], ds.queries[100:]
    full = ablate("full", ds.kb, tr, ev).mean["MRR"]
    no_struct = ablate("no_struct", ds.kb, tr, ev).mean["MRR"]
    CRITERION_NOTES[6] = CRITERION_NOTES.get(6, "") + f"; structure-heavy full {full:.3f} vs no_struct {no_struct:.3f}"
    assert full > no_struct


@criterion(7, "text/answer share rises with text informativeness")
def test_adaptivity_echo():
    settings = (0.1, 0.5, 0.9)
    rows = []
    for seed in range(3):
        row = []
        for tau in settings:
            ds = synth_generate(SynthConfig(seed=seed, n_queries=200, text_informativeness=tau))
            tr, ev = ds.queries[:100], ds.queries[100:]
            cfg = PipelineConfig()
            model, _ = train_model(ds.kb, cfg, tr)
            results = run_queries(Retriever(ds.kb, cfg, model), ev)
            row.append(ratio_analysis(results, [q.answers for q in ev]).text_answer)
        rows.append(row)
    note(7, "; ".join("/".join(f"{v:.2f}" for v in r) for r in rows))
    for row in rows:
        assert all(a < b for a, b in zip(row, row[1:])), row


@criterion(8, "Hit@k, R@20 and MRR match brute-force recomputation")
def test_metric_definitions():
    rng = np.random.default_rng(8)
    items = [f"n{i}" for i in range(30)]
    for _ in range(1000):
        ranked = [items[i] for i in rng.permutation(30)]
        answers = set(rng.choice(items, size=int(rng.integers(1, 10)), replace=False))
        for k in (1, 5, 10):
            assert hit_at_k(ranked, answers, k) == hit(ranked, answers, k)
        assert recall_at_k(ranked, answers, 20) == recall(ranked, answers, 20)
        assert mrr(ranked, answers) == reciprocal_rank(ranked, answers)
    note(8, "1000 permutations, exact")


@criterion(9, "single-query plan, traverse and rank under 1 s median on 10k nodes")
def test_latency(benchmark):
    ds, tr, ev = benchmark[0]
    cfg = PipelineConfig()
    model, _ = train_model(ds.kb, cfg, tr)
    retriever = Retriever(ds.kb, cfg, model)
    times = []
    for q in ev:
        start = time.perf_counter()
        retriever.retrieve(q)
        times.append(time.perf_counter() - start)
    med = statistics.median(times)
    note(9, f"median {1000 * med:.1f} ms, max {1000 * max(times):.1f} ms over {len(times)} queries")
    assert len(times) == 100 and med < 1.0


@criterion(10, "invalid plans, empty intersections, empty KB and unknown categories degrade gracefully")
def test_robustness():
    kb = f1_kb()
    r = Retriever(kb, PipelineConfig(ranker="initial"))
    seen = []

    out = r.retrieve("stellar", parse_plan("Author -> ; Paper"))
    assert out.fallback and out.reason == "dangling arrow" and out.ids
    seen.append(out.reason)

    no_text = Retriever(kb, PipelineConfig(ranker="initial", traversal=TraversalConfig(per_layer_text=0)))
    out = no_text.retrieve("graph networks", parse_plan("Paper ; Author -> Paper"))
    assert out.fallback and out.reason == "empty intersection" and out.ids
    seen.append(out.reason)

    out = r.retrieve("stellar", parse_plan("Venue -> Paper"))
    assert out.fallback and out.reason == "unknown category Venue" and out.ids
    seen.append(out.reason)

    empty = Tgkb([], [])
    for ranker in ("initial", "oracle"):
        res = Retriever(empty, PipelineConfig(ranker=ranker)).retrieve("anything", parse_plan("Paper"))
        assert res.fallback and res.ids == []
    seen.append("empty KB")

    # a category known to the KB but unreachable from every seed still completes
    lonely = Tgkb(
        [NodeRecord("x", "Paper", "alpha"), NodeRecord("y", "Author", "beta")], [EdgeRecord("x", "y", "")]
    )
    res = Retriever(lonely, PipelineConfig(ranker="initial")).retrieve("alpha", parse_plan("Author<zzz> -> Paper"))
    assert not res.fallback or res.reason in ("no candidates", "empty intersection")
    note(10, ", ".join(seen))
