"""Untargeted poisoning: adversarial clicks, Little-Is-Enough, and Fang's aggregator-tailored attacks.

Malicious clients are always the first ``m`` indices. Model-poisoning
crafters only see what an :class:`AttackContext` hands them, which under
partial knowledge is just the attackers' own before-attack updates.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import norm

from .aggregation import AggregatorSpec, krum_scores
from .clicks import ClickModel, builtin_model

log = logging.getLogger(__name__)

ATTACKS = ("none", "data_poison", "lie", "fang_krum", "fang_trmean")
MODEL_ATTACKS = ("lie", "fang_krum", "fang_trmean")
KNOWLEDGE = ("full", "partial")


@dataclass(frozen=True)
class ThreatModel:
    n: int
    m: int = 0
    knowledge: str = "partial"
    attack: str = "none"

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("n must be >= 1")
        if not 0 <= self.m or not 2 * self.m < self.n:
            raise ValueError(f"need 0 <= m < n/2 (n={self.n}, m={self.m})")
        if self.attack not in ATTACKS:
            raise ValueError(f"unknown attack {self.attack!r}")
        if self.knowledge not in KNOWLEDGE:
            raise ValueError(f"unknown knowledge level {self.knowledge!r}")
        if self.attack in MODEL_ATTACKS and self.m == 0:
            raise ValueError(f"{self.attack} needs at least one malicious client")

    def is_malicious(self, client: int) -> bool:
        return self.attack != "none" and client < self.m

    @property
    def roles(self) -> list[str]:
        return ["malicious" if self.is_malicious(i) else "benign" for i in range(self.n)]


@dataclass
class AttackContext:
    known_updates: list[np.ndarray]
    global_params: np.ndarray
    aggregator: AggregatorSpec = field(default_factory=AggregatorSpec)


@dataclass
class CraftResult:
    updates: list[np.ndarray]
    info: dict = field(default_factory=dict)


def apply_data_poison(threat: ThreatModel, benign: ClickModel) -> list[ClickModel]:
    """Per-client click model: poison for malicious clients under data poisoning, ``benign`` otherwise."""
    if threat.attack != "data_poison":
        return [benign] * threat.n
    poison = builtin_model("poison", benign.grade_levels)
    return [poison if i < threat.m else benign for i in range(threat.n)]


def _sign(x: np.ndarray) -> np.ndarray:
    return np.sign(x)  # np.sign(0) == 0: untouched coordinates


def reversed_direction(known: np.ndarray, global_params: np.ndarray) -> np.ndarray:
    """``-sign(mean(known) - w_g)``."""
    return -_sign(known.mean(axis=0) - global_params)


def lie_z(n: int, m: int) -> float:
    supporters = math.floor(n / 2 + 1) - m
    q = (n - m - supporters) / (n - m)
    if not 0.0 < q < 1.0:
        raise ValueError(f"LIE quantile {q} outside (0, 1) for n={n}, m={m}")
    return float(norm.ppf(q))


def lie_craft(attacker_updates, n: int, m: int) -> np.ndarray:
    """``mu - z * sigma`` over the attackers' own before-attack updates (population std)."""
    if m < 1:
        raise ValueError("LIE needs m >= 1")
    if n - m <= 0:
        raise ValueError("LIE needs n > m")
    W = np.vstack([np.asarray(u, dtype=np.float64) for u in attacker_updates])
    if W.shape[0] != m:
        raise ValueError(f"expected {m} attacker updates, got {W.shape[0]}")
    mu = W.mean(axis=0)
    sigma = W.std(axis=0)
    return mu - lie_z(n, m) * sigma


def _assemble(known: np.ndarray, malicious: list[np.ndarray], n: int, m: int, knowledge: str) -> np.ndarray:
    if knowledge == "full":
        others = known[m:]
    else:
        # benign updates are unseen; the attackers' own stand in for them
        others = known[np.arange(n - m) % known.shape[0]]
    return np.vstack(malicious + list(others))


def fang_krum_craft(
    ctx: AttackContext,
    n: int,
    m: int,
    rng: np.random.Generator | None = None,
    knowledge: str | None = None,
    lambda_init: float | None = None,
    jitter: bool = True,
    lambda_min: float = 1e-5,
    max_iter: int = 60,
) -> CraftResult:
    """Fang's attack on Krum / Multi-Krum: ``w_g + lambda * s`` with ``lambda`` found by halving.

    Starting from ``lambda_init`` (default: the largest pairwise distance
    among the known updates), ``lambda`` is halved until Krum over the
    assembled submissions picks a malicious one. If the search runs out, the
    last candidate is submitted and ``info["success"]`` is False.
    """
    known = np.vstack([np.asarray(u, dtype=np.float64) for u in ctx.known_updates])
    knowledge = knowledge or ("full" if known.shape[0] == n else "partial")
    expected = n if knowledge == "full" else m
    if known.shape[0] != expected:
        raise ValueError(f"{knowledge} knowledge expects {expected} known updates, got {known.shape[0]}")
    w_g = np.asarray(ctx.global_params, dtype=np.float64)
    s = reversed_direction(known, w_g)

    if lambda_init is None:
        lambda_init = float(np.max(np.linalg.norm(known[:, None] - known[None, :], axis=2)))
        if lambda_init == 0.0:
            lambda_init = float(np.max(np.abs(known.mean(axis=0) - w_g)))
    rng = rng or np.random.default_rng(0)
    directions = rng.standard_normal((max(m - 1, 0), w_g.size)) if jitter else None
    if directions is not None:
        directions /= np.maximum(np.linalg.norm(directions, axis=1, keepdims=True), 1e-300)

    def submissions(lam):
        crafted = w_g + lam * s
        if directions is None:
            return [crafted] + [crafted.copy() for _ in range(m - 1)]
        eps = 1e-4 * np.linalg.norm(crafted)
        return [crafted] + [crafted + eps * d for d in directions]

    lam = lambda_init
    trace = []
    success = False
    malicious = submissions(lam)
    for _ in range(max_iter):
        trace.append(lam)
        malicious = submissions(lam)
        scores = krum_scores(_assemble(known, malicious, n, m, knowledge), m)
        if int(np.argmin(scores)) < m:
            success = True
            break
        lam /= 2.0
        if lam < lambda_min:
            break
    if not success:
        log.warning("fang_krum: lambda search failed after %d candidates (last %.3g)", len(trace), trace[-1])
    return CraftResult(
        malicious,
        {"lambda": trace[-1], "lambda_trace": trace, "halvings": len(trace) - 1, "success": success},
    )


def fang_trmean_craft(
    ctx: AttackContext,
    n: int,
    m: int,
    rng: np.random.Generator,
    knowledge: str | None = None,
    b: float = 2.0,
) -> CraftResult:
    """Fang's attack on Trimmed Mean / Median.

    Each crafted coordinate is sampled beyond the extreme known value on
    the side opposite to the benign update direction. Under partial
    knowledge the extremes are estimated from the attackers' updates as
    ``mu +/- 4 sigma`` and samples come from the band between 3 and 4 sigma.
    """
    known = np.vstack([np.asarray(u, dtype=np.float64) for u in ctx.known_updates])
    knowledge = knowledge or ("full" if known.shape[0] == n else "partial")
    w_g = np.asarray(ctx.global_params, dtype=np.float64)
    mu = known.mean(axis=0)
    s = reversed_direction(known, w_g)
    d = mu.size

    if knowledge == "full":
        w_max, w_min = known.max(axis=0), known.min(axis=0)
        up_lo = w_max
        up_hi = np.where(w_max > 0, b * w_max, w_max / b)
        down_lo = np.where(w_min > 0, w_min / b, b * w_min)
        down_hi = w_min
    else:
        sigma = known.std(axis=0)
        up_lo, up_hi = mu + 3 * sigma, mu + 4 * sigma
        down_lo, down_hi = mu - 4 * sigma, mu - 3 * sigma

    lo = np.where(s > 0, up_lo, np.where(s < 0, down_lo, mu))
    hi = np.where(s > 0, up_hi, np.where(s < 0, down_hi, mu))
    crafted = [lo + rng.random(d) * (hi - lo) for _ in range(m)]
    return CraftResult(crafted, {"direction": s})
