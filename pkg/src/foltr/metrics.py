"""Offline DCG / nDCG evaluation of a ranker on held-out queries."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import Dataset
from .models import ModelSpec, score_batch


@dataclass(frozen=True)
class MetricRecord:
    round: int
    ndcg_at_10: float
    fingerprint: str = ""
    seed: int = 0


def dcg_at_k(relevances, k: int) -> float:
    """Exponential-gain DCG: sum of ``(2**rel - 1) / log2(i + 1)`` over the top ``k`` positions."""
    if k < 1:
        raise ValueError("k must be >= 1")
    rels = np.asarray(relevances, dtype=np.float64)[:k]
    if rels.size and rels.min() < 0:
        raise ValueError("relevance grades must be non-negative")
    discounts = np.log2(np.arange(2, rels.size + 2))
    return float(np.sum((np.exp2(rels) - 1.0) / discounts))


def ndcg_at_k(ranked_relevances, all_relevances, k: int) -> float:
    """DCG of the ranking over the ideal DCG; 0.0 when the ideal DCG is 0."""
    ideal = dcg_at_k(np.sort(np.asarray(all_relevances))[::-1], k)
    actual = dcg_at_k(ranked_relevances, k)
    if ideal == 0.0:
        return 0.0
    return actual / ideal


def rank_by_score(scores: np.ndarray) -> np.ndarray:
    """Descending order; equal scores keep input order."""
    return np.argsort(-np.asarray(scores), kind="stable")


def offline_eval(spec: ModelSpec, params: np.ndarray, test: Dataset, k: int = 10) -> float:
    if len(test) == 0:
        raise ValueError("empty test set")
    total = 0.0
    for q in test.queries:
        order = rank_by_score(score_batch(spec, params, q.features))
        total += ndcg_at_k(q.labels[order], q.labels, k)
    return total / len(test)
