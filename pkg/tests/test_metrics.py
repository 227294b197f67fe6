import numpy as np
import pytest

from oracles import hit, recall, reciprocal_rank
from mixtrav.metrics import METRIC_NAMES, hit_at_k, mrr, query_metrics, recall_at_k


def test_definitions():
    assert hit_at_k(["a", "b", "c"], {"b"}, 1) == 0
    assert hit_at_k(["a", "b", "c"], {"b"}, 2) == 1
    assert hit_at_k([], {"b"}, 3) == 0
    assert recall_at_k(["a", "b"], {"a", "b", "c"}, 20) == pytest.approx(2 / 3)
    assert recall_at_k(["a", "b", "c"], {"a", "c"}, 20) == 1.0
    assert recall_at_k(["x"], {"a"}, 20) == 0.0
    assert mrr(["x", "y", "a"], {"a"}) == pytest.approx(1 / 3)
    assert mrr(["a"], {"a"}) == 1.0
    assert mrr(["x"], {"a"}) == 0.0
    with pytest.raises(ValueError):
        hit_at_k(["a"], {"a"}, 0)
    with pytest.raises(ValueError):
        recall_at_k(["a"], set(), 5)
    assert tuple(query_metrics(["a"], {"a"})) == METRIC_NAMES


def test_random_permutations_match_brute_force():
    rng = np.random.default_rng(0)
    items = [f"n{i}" for i in range(40)]
    for _ in range(1000):
        ranked = [items[i] for i in rng.permutation(len(items))[: rng.integers(0, 41)]]
        answers = set(rng.choice(items, size=rng.integers(1, 25), replace=False))
        for k in (1, 5, 20):
            assert hit_at_k(ranked, answers, k) == hit(ranked, answers, k)
        assert recall_at_k(ranked, answers, 20) == recall(ranked, answers, 20)
        assert mrr(ranked, answers) == reciprocal_rank(ranked, answers)
        hits = [hit_at_k(ranked, answers, k) for k in range(1, 30)]
        assert hits == sorted(hits)
        assert (mrr(ranked, answers) == 1.0) == (hit_at_k(ranked, answers, 1) == 1)
