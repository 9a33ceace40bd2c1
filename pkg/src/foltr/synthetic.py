"""Synthetic LETOR-style data whose relevance is a noiseless linear function of the features."""
from __future__ import annotations

import numpy as np

from .data import Dataset, QueryGroup

# fraction of documents below each grade boundary; skewed towards irrelevant like real LETOR sets
DEFAULT_QUANTILES = {3: (0.6, 0.85), 5: (0.5, 0.7, 0.85, 0.95)}


def separable_dataset(
    n_queries: int = 200,
    docs_per_query: int = 10,
    n_features: int = 5,
    grade_levels: int = 5,
    seed: int = 0,
    quantiles=None,
    name: str = "synthetic",
) -> Dataset:
    """Uniform [0, 1] features; grades are quantile bins of ``x @ w_true`` with ``w_true > 0``.

    Bins are global, so a linear ranker along ``w_true`` orders every query
    perfectly up to ties inside a bin.
    """
    quantiles = DEFAULT_QUANTILES[grade_levels] if quantiles is None else tuple(quantiles)
    if len(quantiles) != grade_levels - 1:
        raise ValueError("need grade_levels - 1 quantile boundaries")
    rng = np.random.default_rng(seed)
    w_true = rng.uniform(0.5, 1.5, size=n_features)
    X = rng.uniform(0.0, 1.0, size=(n_queries, docs_per_query, n_features))
    utility = X @ w_true
    edges = np.quantile(utility, quantiles)
    grades = np.searchsorted(edges, utility, side="right")
    queries = tuple(
        QueryGroup(str(q + 1), X[q], grades[q]) for q in range(n_queries)
    )
    return Dataset(queries, n_features, grade_levels, name=name)
