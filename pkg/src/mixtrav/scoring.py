"""Textual relevance scorers and category-filtered top-K retrieval.

Every scorer exposes ``scores(query)``, a read-only vector aligned with
``kb.ids``, and ``score(query, node_id)``. Vectors for recently seen
queries are cached, which matters because a traversal asks for the same
expanded query at several layers and again during feature extraction.
"""

from __future__ import annotations

import hashlib
import json
import math
from collections import Counter
from dataclasses import dataclass
from functools import lru_cache
from typing import Protocol

import numpy as np
from scipy import sparse

from .kb import Tgkb, UnknownNodeError
from .text import tokenize


class Scorer(Protocol):
    kb: Tgkb

    def scores(self, query: str) -> np.ndarray: ...

    def score(self, query: str, node_id: str) -> float: ...


class _CachedScorer:
    cache_size = 512

    def __init__(self, kb: Tgkb):
        self.kb = kb
        self._cached = lru_cache(maxsize=self.cache_size)(self._frozen_scores)

    def _compute(self, query: str) -> np.ndarray:
        raise NotImplementedError

    def _frozen_scores(self, query: str) -> np.ndarray:
        out = self._compute(query)
        out.flags.writeable = False
        return out

    def scores(self, query: str) -> np.ndarray:
        return self._cached(query)

    def score(self, query: str, node_id: str) -> float:
        try:
            pos = self.kb.position[node_id]
        except KeyError:
            raise UnknownNodeError(node_id) from None
        return float(self.scores(query)[pos])


class Bm25Index(_CachedScorer):
    """Okapi BM25 over every node document.

    Query terms are used as a set, and IDF is ``ln((N - df + 0.5)/(df + 0.5) + 1)``.
    """

    def __init__(self, kb: Tgkb, k1: float = 1.2, b: float = 0.75):
        if k1 <= 0:
            raise ValueError("k1 must be positive")
        if not 0.0 <= b <= 1.0:
            raise ValueError("b must lie in [0, 1]")
        super().__init__(kb)
        self.k1 = float(k1)
        self.b = float(b)
        self.n_docs = len(kb)

        counts = [Counter(tokenize(kb.nodes[i].document)) for i in kb.ids]
        self.doc_len: dict[str, int] = {i: sum(c.values()) for i, c in zip(kb.ids, counts)}
        self.avg_doc_len = (sum(self.doc_len.values()) / self.n_docs) if self.n_docs else 0.0

        postings: dict[str, tuple[list[int], list[int]]] = {}
        for pos, c in enumerate(counts):
            for term, tf in c.items():
                docs, tfs = postings.setdefault(term, ([], []))
                docs.append(pos)
                tfs.append(tf)
        self.doc_freq: dict[str, int] = {t: len(p[0]) for t, p in sorted(postings.items())}

        lengths = np.array([self.doc_len[i] for i in kb.ids], dtype=np.float64)
        if self.avg_doc_len > 0:
            norm = self.k1 * (1.0 - self.b + self.b * lengths / self.avg_doc_len)
        else:
            norm = np.full(self.n_docs, self.k1 * (1.0 - self.b))
        self._postings: dict[str, tuple[np.ndarray, np.ndarray]] = {}
        self._tf: dict[str, dict[int, int]] = {}
        for term in self.doc_freq:
            docs, tfs = postings[term]
            d = np.asarray(docs, dtype=np.int64)
            f = np.asarray(tfs, dtype=np.float64)
            weight = self.idf(term) * f / (f + norm[d])
            self._postings[term] = (d, weight)
            self._tf[term] = dict(zip(docs, tfs))

    def idf(self, term: str) -> float:
        df = self.doc_freq.get(term, 0)
        return math.log((self.n_docs - df + 0.5) / (df + 0.5) + 1.0)

    def term_freq(self, node_id: str, term: str) -> int:
        pos = self.kb.position.get(node_id)
        if pos is None:
            raise UnknownNodeError(node_id)
        return self._tf.get(term, {}).get(pos, 0)

    def _compute(self, query: str) -> np.ndarray:
        out = np.zeros(self.n_docs, dtype=np.float64)
        for term in sorted(set(tokenize(query))):
            hit = self._postings.get(term)
            if hit is not None:
                out[hit[0]] += hit[1]
        return out

    def state_bytes(self) -> bytes:
        """Canonical serialization of the index statistics (for artifacts)."""
        state = {
            "k1": self.k1,
            "b": self.b,
            "n_docs": self.n_docs,
            "avg_doc_len": self.avg_doc_len,
            "doc_len": self.doc_len,
            "doc_freq": self.doc_freq,
            "term_freq": {
                t: {self.kb.ids[p]: n for p, n in sorted(self._tf[t].items())} for t in self.doc_freq
            },
        }
        return json.dumps(state, sort_keys=True, ensure_ascii=False).encode("utf-8")


def build_bm25(kb: Tgkb, k1: float = 1.2, b: float = 0.75) -> Bm25Index:
    return Bm25Index(kb, k1=k1, b=b)


def bm25_score(idx: Bm25Index, query: str, v: str) -> float:
    return idx.score(query, v)


class HashedEmbeddingScorer(_CachedScorer):
    """Cosine similarity between signed-hash bag-of-words embeddings.

    A deterministic, dependency-free stand-in for a dense semantic encoder.
    Each token hashes to one coordinate and a sign; a text's embedding is
    the L2-normalized sum over its tokens.
    """

    def __init__(self, kb: Tgkb, dim: int = 256, seed: int = 0):
        if dim < 1:
            raise ValueError("dim must be >= 1")
        super().__init__(kb)
        self.dim = int(dim)
        self.seed = int(seed)
        self._key = self.seed.to_bytes(8, "little", signed=True)
        self._slots: dict[str, tuple[int, float]] = {}
        rows, cols, vals = [], [], []
        for pos, i in enumerate(kb.ids):
            vec = self._sparse_embedding(kb.nodes[i].document)
            for col, val in vec.items():
                rows.append(pos)
                cols.append(col)
                vals.append(val)
        self._docs = sparse.csr_matrix(
            (np.asarray(vals, dtype=np.float64), (rows, cols)), shape=(len(kb), self.dim)
        )

    def _slot(self, token: str) -> tuple[int, float]:
        hit = self._slots.get(token)
        if hit is None:
            h = int.from_bytes(
                hashlib.blake2b(token.encode("utf-8"), digest_size=8, key=self._key).digest(),
                "little",
            )
            hit = (h % self.dim, 1.0 if (h >> 63) & 1 == 0 else -1.0)
            self._slots[token] = hit
        return hit

    def _sparse_embedding(self, text: str) -> dict[int, float]:
        acc: dict[int, float] = {}
        for tok in tokenize(text):
            col, sign = self._slot(tok)
            acc[col] = acc.get(col, 0.0) + sign
        norm = math.sqrt(sum(v * v for v in acc.values()))
        if norm == 0.0:
            return {}
        return {c: v / norm for c, v in sorted(acc.items()) if v != 0.0}

    def embed(self, text: str) -> np.ndarray:
        out = np.zeros(self.dim)
        for col, val in self._sparse_embedding(text).items():
            out[col] = val
        return out

    def similarity(self, a: str, b: str) -> float:
        """Cosine between two arbitrary texts; 0 when either is empty."""
        ea, eb = self._sparse_embedding(a), self._sparse_embedding(b)
        return float(sum(v * eb.get(c, 0.0) for c, v in ea.items()))

    def _compute(self, query: str) -> np.ndarray:
        return np.asarray(self._docs @ self.embed(query), dtype=np.float64)


def embed_score(s: HashedEmbeddingScorer, query: str, v: str) -> float:
    return s.score(query, v)


@dataclass(frozen=True)
class ScoredNode:
    node: str
    score: float


def rank_positions(scores: np.ndarray, positions: np.ndarray, k: int) -> np.ndarray:
    """The ``k`` best positions under (score desc, position asc)."""
    if k <= 0 or len(positions) == 0:
        return positions[:0]
    sub = scores[positions]
    if len(positions) > 4 * k:
        # shortlist: everything scoring at least the k-th best value
        kth = np.partition(sub, len(sub) - k)[len(sub) - k]
        keep = sub >= kth
        positions, sub = positions[keep], sub[keep]
    order = np.lexsort((positions, -sub))
    return positions[order[:k]]


def topk_by_category(kb: Tgkb, scorer: Scorer, query_expanded: str, c: str, k: int) -> list[ScoredNode]:
    """Top ``k`` nodes of category ``c``; an unknown category yields ``[]``."""
    if k < 1:
        raise ValueError("k must be >= 1")
    scores = scorer.scores(query_expanded)
    best = rank_positions(scores, kb.category_positions(c), k)
    return [ScoredNode(kb.ids[p], float(scores[p])) for p in best]


def topk_all(kb: Tgkb, scorer: Scorer, query: str, k: int) -> list[ScoredNode]:
    """Top ``k`` nodes over the whole KB with no category filter."""
    scores = scorer.scores(query)
    best = rank_positions(scores, np.arange(len(kb), dtype=np.int64), k)
    return [ScoredNode(kb.ids[p], float(scores[p])) for p in best]


def make_scorer(kb: Tgkb, kind: str = "bm25", *, k1=1.2, b=0.75, dim=256, seed=0) -> Scorer:
    if kind == "bm25":
        return Bm25Index(kb, k1=k1, b=b)
    if kind == "hashed":
        return HashedEmbeddingScorer(kb, dim=dim, seed=seed)
    raise ValueError(f"unknown scorer kind {kind!r}")
