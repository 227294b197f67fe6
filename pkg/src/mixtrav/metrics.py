"""Ranked-retrieval metrics: Hit@k, Recall@k and reciprocal rank."""

from typing import Collection, Sequence


def hit_at_k(ranked: Sequence[str], answers: Collection[str], k: int) -> int:
    if k < 1:
        raise ValueError("k must be >= 1")
    return int(any(r in answers for r in ranked[:k]))


def recall_at_k(ranked: Sequence[str], answers: Collection[str], k: int) -> float:
    if not answers:
        raise ValueError("answers must be non-empty")
    return len(set(ranked[:k]) & set(answers)) / len(set(answers))


def mrr(ranked: Sequence[str], answers: Collection[str]) -> float:
    """Reciprocal rank of the first answer in ``ranked`` (0 if none)."""
    for rank, r in enumerate(ranked, start=1):
        if r in answers:
            return 1.0 / rank
    return 0.0


def query_metrics(ranked: Sequence[str], answers: Collection[str]) -> dict[str, float]:
    return {
        "H@1": float(hit_at_k(ranked, answers, 1)),
        "H@5": float(hit_at_k(ranked, answers, 5)),
        "R@20": recall_at_k(ranked, answers, 20),
        "MRR": mrr(ranked, answers),
    }


METRIC_NAMES = ("H@1", "H@5", "R@20", "MRR")
