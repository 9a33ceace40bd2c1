"""Server-side aggregation: FedAvg and the Byzantine-robust rules Krum, Multi-Krum, Trimmed Mean, Median.

Robust rules take plain parameter vectors; only FedAvg uses interaction counts.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

RULES = ("fedavg", "krum", "multi_krum", "trimmed_mean", "median")


def _stack(updates) -> np.ndarray:
    arrays = [np.asarray(u, dtype=np.float64).ravel() for u in updates]
    if not arrays:
        raise ValueError("no updates to aggregate")
    if len({a.size for a in arrays}) != 1:
        raise ValueError("updates have different lengths")
    return np.vstack(arrays)


def fedavg(params, counts) -> np.ndarray:
    """Interaction-count-weighted mean."""
    W = _stack(params)
    counts = np.asarray(counts, dtype=np.float64)
    if counts.shape != (W.shape[0],):
        raise ValueError("need one interaction count per update")
    if np.any(counts < 0) or counts.sum() <= 0:
        raise ValueError("interaction counts must be non-negative with a positive total")
    return (counts / counts.sum()) @ W


def krum_scores(updates, m: int) -> np.ndarray:
    """Sum of Euclidean distances from each update to its ``n - m - 2`` nearest others."""
    W = _stack(updates)
    n = W.shape[0]
    k = n - m - 2
    if m < 0 or k < 1:
        raise ValueError(f"Krum needs n >= m + 3 (n={n}, m={m})")
    # explicit differences; the Gram-matrix shortcut loses precision on near-identical updates
    dist = np.linalg.norm(W[:, None, :] - W[None, :, :], axis=2)
    np.fill_diagonal(dist, np.inf)
    return np.sort(dist, axis=1)[:, :k].sum(axis=1)


def krum(updates, m: int) -> np.ndarray:
    W = _stack(updates)
    # argmin returns the first minimum: lowest client index wins ties
    return W[int(np.argmin(krum_scores(W, m)))].copy()


def multi_krum(updates, m: int, f: int | None = None) -> np.ndarray:
    W = _stack(updates)
    n = W.shape[0]
    f = n - m if f is None else f
    if not 1 <= f <= n:
        raise ValueError(f"multi_krum needs 1 <= f <= n (f={f}, n={n})")
    chosen = np.argsort(krum_scores(W, m), kind="stable")[:f]
    return W[chosen].mean(axis=0)


def trimmed_mean(updates, beta: int) -> np.ndarray:
    W = _stack(updates)
    n = W.shape[0]
    if beta < 0 or n - 2 * beta < 1:
        raise ValueError(f"trimmed_mean needs n - 2*beta >= 1 (n={n}, beta={beta})")
    return np.sort(W, axis=0)[beta : n - beta].mean(axis=0)


def coordinate_median(updates) -> np.ndarray:
    """Per-coordinate median; with an even count, the mean of the two middle values."""
    return np.median(_stack(updates), axis=0)


@dataclass(frozen=True)
class AggregatorSpec:
    """Aggregation rule plus its robustness parameters.

    ``m`` is the number of malicious clients the server assumes. ``f`` and
    ``beta`` default to ``n - m`` and ``m``.
    """

    rule: str = "fedavg"
    m: int = 0
    f: int | None = None
    beta: int | None = None

    def __post_init__(self):
        if self.rule not in RULES:
            raise ValueError(f"unknown aggregation rule {self.rule!r}")
        if self.m < 0:
            raise ValueError("m must be non-negative")

    def resolved_f(self, n: int) -> int:
        return n - self.m if self.f is None else self.f

    def resolved_beta(self) -> int:
        return self.m if self.beta is None else self.beta

    def check(self, n: int) -> list[str]:
        """Precondition failures for ``n`` clients (empty when valid)."""
        problems = []
        if self.rule in ("krum", "multi_krum") and n - self.m - 2 < 1:
            problems.append(f"{self.rule} requires n - m - 2 >= 1 (n={n}, m={self.m})")
        if self.rule == "multi_krum" and not 1 <= self.resolved_f(n) <= n:
            problems.append(f"multi_krum requires 1 <= f <= n (f={self.resolved_f(n)})")
        if self.rule == "trimmed_mean" and (self.resolved_beta() < 0 or n - 2 * self.resolved_beta() < 1):
            problems.append(f"trimmed_mean requires n - 2*beta >= 1 (n={n}, beta={self.resolved_beta()})")
        return problems

    def aggregate(self, params, counts=None) -> np.ndarray:
        if self.rule == "fedavg":
            counts = np.ones(len(params)) if counts is None else counts
            return fedavg(params, counts)
        if self.rule == "krum":
            return krum(params, self.m)
        if self.rule == "multi_krum":
            return multi_krum(params, self.m, self.resolved_f(len(params)))
        if self.rule == "trimmed_mean":
            return trimmed_mean(params, self.resolved_beta())
        return coordinate_median(params)
