import pytest

from mixtrav.kb import dump_edges, dump_nodes
from mixtrav.planner import parse_plan, serialize_plan
from mixtrav.queries import dump_queries, parse_queries
from mixtrav.synth import MAG_COUNTS, QueryTemplate, SynthConfig, synth_generate
from mixtrav.traversal import brute_force_retrieve

SMALL = SynthConfig(n_queries=25, seed=3).scaled(600)


def test_deterministic_bytes():
    a, b = synth_generate(SMALL), synth_generate(SMALL)
    assert dump_nodes(a.kb) == dump_nodes(b.kb)
    assert dump_edges(a.kb) == dump_edges(b.kb)
    assert dump_queries(a.queries) == dump_queries(b.queries)
    c = synth_generate(SynthConfig(n_queries=25, seed=4).scaled(600))
    assert dump_nodes(c.kb) != dump_nodes(a.kb)


def test_counts_and_schema():
    ds = synth_generate(SMALL)
    counts = {c: len(m) for c, m in ds.kb.category_index.items()}
    assert counts == SMALL.counts
    assert ds.kb.schema == set(MAG_COUNTS)


def test_answers_match_oracle_and_plans_are_canonical():
    ds = synth_generate(SMALL)
    assert len(ds.queries) == 25
    for q in ds.queries:
        g = parse_plan(q.gold_plan).graph
        assert serialize_plan(g) == q.gold_plan
        assert brute_force_retrieve(ds.kb, g) == set(q.answers)
        assert 1 <= len(q.answers) <= SMALL.max_answers
        assert q.id in ds.info


def test_queries_file_round_trip():
    ds = synth_generate(SMALL)
    assert parse_queries(dump_queries(ds.queries)) == ds.queries


def test_knob_controls_textual_templates():
    low = synth_generate(SynthConfig(n_queries=40, seed=1, text_informativeness=0.0).scaled(800))
    high = synth_generate(SynthConfig(n_queries=40, seed=1, text_informativeness=1.0).scaled(800))
    assert not any(i.textual for i in low.info.values())
    assert all(i.textual for i in high.info.values())


def test_invalid_configs():
    with pytest.raises(ValueError):
        SynthConfig(text_informativeness=1.5).validate()
    with pytest.raises(ValueError):
        SynthConfig(degree="exotic").validate()
    bad = SynthConfig(templates=(QueryTemplate("v", "venues {x}", "Venue<{x}> -> Paper"),))
    with pytest.raises(ValueError, match="unknown categories"):
        bad.validate()


def test_unsatisfiable_template_is_skipped():
    impossible = QueryTemplate("loop", "institutions of {inst}", "Institution<{inst}> -> Institution")
    ds = synth_generate(SynthConfig(n_queries=3, templates=(impossible,), max_attempts=3).scaled(300))
    assert ds.queries == []
