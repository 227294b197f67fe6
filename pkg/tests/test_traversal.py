import pytest

from conftest import WORKED_PLAN, WORKED_QUERY
from mixtrav.kb import Tgkb
from mixtrav.planner import PlanOutcome, parse_plan
from mixtrav.scoring import build_bm25
from mixtrav.synth import SynthConfig, synth_generate
from mixtrav.traversal import (
    StepKind, Trajectory, TrajectoryStep, TraversalConfig, brute_force_retrieve, check_trajectory,
    expand_structural, expand_textual, merge_candidates, mixed_traverse, traverse_path,
)


def seed(node, cat):
    return Trajectory((TrajectoryStep(node, cat, StepKind.SEED),))


def graph(text):
    out = parse_plan(text)
    assert out.is_valid
    return out.graph


@pytest.fixture
def bm25(kb):
    return build_bm25(kb)


def test_expand_structural(kb):
    assert set(expand_structural(kb, {"I1": seed("I1", "Institution")}, "Author")) == {"A1", "A2"}
    prev = {"A1": seed("A1", "Author"), "A2": seed("A2", "Author")}
    out = expand_structural(kb, prev, "Paper")
    assert set(out) == {"P1", "P2"}
    assert out["P1"].steps[-1] == TrajectoryStep("P1", "Paper", StepKind.STRUCTURAL)
    assert expand_structural(kb, {"P1": seed("P1", "Paper")}, "Institution") == {}
    assert expand_structural(kb, {}, "Paper") == {}
    assert set(prev) == {"A1", "A2"}


def test_structural_parent_choice_is_smallest_id(kb):
    prev = {"F1c": seed("F1c", "Field-of-Study"), "A1": seed("A1", "Author")}
    out = expand_structural(kb, prev, "Paper")
    assert out["P1"].steps[0].node == "A1"


def test_expand_textual(kb, bm25):
    out = expand_textual(kb, bm25, WORKED_QUERY, "Stellar Populations", "Field-of-Study", 10)
    assert set(out) == {"F1c"}
    assert out["F1c"].final.kind is StepKind.TEXTUAL
    assert set(expand_textual(kb, bm25, "graph tails", None, "Paper", 50)) == {"P1", "P2"}
    assert expand_textual(kb, bm25, "nothing shared", None, "Paper", 50) == {}
    assert set(expand_textual(kb, bm25, "nothing shared", None, "Paper", 50, keep_unmatched=True)) == {"P1", "P2"}
    assert expand_textual(kb, bm25, "x", None, "Venue", 5) == {}


def test_traverse_first_path(kb, bm25):
    path = graph("Institution<Point Park University> -> Author -> Paper").paths[0]
    out = traverse_path(kb, bm25, WORKED_QUERY, path, TraversalConfig(n_seeds=5, per_layer_text=10))
    assert {"P1", "P2"} <= set(out)
    steps = [(s.node, s.kind) for s in out["P1"].steps]
    assert steps == [("I1", StepKind.SEED), ("A1", StepKind.STRUCTURAL), ("P1", StepKind.STRUCTURAL)]
    for traj in out.values():
        check_trajectory(kb, traj, path)


def test_degenerate_paths(kb, bm25):
    out = traverse_path(kb, bm25, "graph tails", graph("Paper").paths[0], TraversalConfig(n_seeds=5))
    assert set(out) == {"P1", "P2"}
    assert all(len(t) == 1 and t.final.kind is StepKind.SEED for t in out.values())
    # a category with no members leaves only textual unions
    kb2 = Tgkb(list(kb.nodes.values()), [])
    out = traverse_path(kb2, build_bm25(kb2), "doe roe", graph("Institution -> Author").paths[0], TraversalConfig())
    assert set(out) == {"A1", "A2"}
    assert all(t.final.kind is StepKind.TEXTUAL and t.start_layer == 1 for t in out.values())


def test_worked_example_intersection(kb, bm25):
    res = mixed_traverse(kb, bm25, WORKED_QUERY, parse_plan(WORKED_PLAN))
    assert set(res.candidates) == {"P1"} and not res.fallback
    assert brute_force_retrieve(kb, graph(WORKED_PLAN)) == {"P1"}


def test_retention_across_paths_prefers_longest(kb, bm25):
    res = mixed_traverse(kb, bm25, WORKED_QUERY, graph(WORKED_PLAN))
    assert [s.node for s in res.candidates["P1"].steps] == ["I1", "A1", "P1"]


def test_retention_rule_order():
    a = Trajectory((TrajectoryStep("x", "C", StepKind.SEED), TrajectoryStep("y", "C", StepKind.TEXTUAL)))
    b = Trajectory((TrajectoryStep("x", "C", StepKind.SEED), TrajectoryStep("y", "C", StepKind.STRUCTURAL)))
    c = Trajectory((TrajectoryStep("y", "C", StepKind.TEXTUAL),))
    assert merge_candidates({"y": c}, {"y": a}, {"y": b})["y"] is b
    d = Trajectory((TrajectoryStep("w", "C", StepKind.SEED), TrajectoryStep("y", "C", StepKind.STRUCTURAL)))
    assert merge_candidates({"y": b}, {"y": d})["y"] is d


def test_single_path_and_fallbacks(kb, bm25):
    res = mixed_traverse(kb, bm25, "graph", parse_plan("Author -> Paper"))
    assert not res.fallback
    res = mixed_traverse(kb, bm25, "stellar", PlanOutcome.invalid("junk"), TraversalConfig(fallback_k=20))
    assert res.fallback and res.reason == "junk"
    assert set(res.candidates) == set(kb.ids)  # fewer than 20 nodes: all of them
    assert all(t.final.kind is StepKind.TEXTUAL for t in res.candidates.values())
    # categories absent from the KB produce nothing to intersect or unite
    res = mixed_traverse(kb, bm25, "stellar", parse_plan("Venue"), TraversalConfig(fallback_k=2))
    assert res.fallback and res.reason == "no candidates"
    assert list(res.candidates) == ["F1c", "P1"]
    res = mixed_traverse(kb, bm25, "graph networks", graph("Paper ; Author -> Paper"), TraversalConfig(per_layer_text=0))
    assert res.fallback and res.reason == "empty intersection"
    assert set(res.candidates) == {"P2"}


def test_brute_force_examples(kb):
    assert brute_force_retrieve(kb, graph("Field-of-Study<xyzzy> -> Paper")) == set()
    assert brute_force_retrieve(kb, graph("Paper")) == {"P1", "P2"}


def synthetic(seed=0, total=400, n_queries=15, tau=0.3):
    return synth_generate(SynthConfig(seed=seed, n_queries=n_queries, text_informativeness=tau).scaled(total))


def test_oracle_equivalence_and_soundness():
    for s in range(3):
        ds = synthetic(seed=s)
        idx = build_bm25(ds.kb)
        for q in ds.queries:
            g = graph(q.gold_plan)
            res = mixed_traverse(ds.kb, idx, q.text, g, TraversalConfig.structural_only())
            assert set(res.candidates) == brute_force_retrieve(ds.kb, g) == set(q.answers)
            mixed = mixed_traverse(ds.kb, idx, q.text, g)
            for traj in mixed.candidates.values():
                check_trajectory(ds.kb, traj, g.paths[traj.path_index])


def test_layer_trace_decomposition():
    ds = synthetic(seed=4)
    idx = build_bm25(ds.kb)
    for q in ds.queries[:8]:
        path = graph(q.gold_plan).paths[0]
        trace = []
        out = traverse_path(ds.kb, idx, q.text, path, TraversalConfig(), trace=trace)
        assert [t.layer for t in trace] == list(range(len(path)))
        for t in trace:
            assert t.struct_count + t.text_count >= t.union_count >= max(t.struct_count, t.text_count)
        assert trace[-1].union_count == len(out)
        # the structural part equals a pure structural expansion of the previous layer
        if len(path) > 1:
            prev = traverse_path(ds.kb, idx, q.text, type(path)(path.nodes[:-1]), TraversalConfig())
            assert trace[-1].struct_count == len(expand_structural(ds.kb, prev, path.target))


def test_monotone_in_t_and_deterministic():
    ds = synthetic(seed=5)
    idx = build_bm25(ds.kb)
    for q in ds.queries[:10]:
        for path in graph(q.gold_plan).paths:
            sets = [set(traverse_path(ds.kb, idx, q.text, path, TraversalConfig(per_layer_text=t))) for t in (0, 3, 10, 30)]
            assert all(a <= b for a, b in zip(sets, sets[1:]))
        a = mixed_traverse(ds.kb, idx, q.text, graph(q.gold_plan))
        b = mixed_traverse(ds.kb, idx, q.text, graph(q.gold_plan))
        assert a == b


def test_config_validation():
    with pytest.raises(ValueError):
        TraversalConfig(n_seeds=0)
    with pytest.raises(ValueError):
        TraversalConfig(per_layer_text=-1)
