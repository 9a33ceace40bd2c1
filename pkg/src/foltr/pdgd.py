"""Pairwise Differentiable Gradient Descent: the local client update.

One interaction is: sample a SERP from the Plackett-Luce distribution over
the ranker's scores, simulate clicks on it, infer pairwise preferences from
the clicks, weight each pair by how likely the reversed pair would have been
displayed, and step up the weighted pairwise-probability gradient.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit, logsumexp

from .clicks import ClickModel, simulate_session
from .data import Dataset, QueryGroup
from .models import ModelSpec, score_batch, score_gradient_batch

SERP_LENGTH = 10


@dataclass
class Interaction:
    query_id: str
    displayed: np.ndarray
    clicks: np.ndarray


@dataclass(frozen=True)
class PreferencePair:
    preferred: int
    dispreferred: int
    weight: float | None = None

    def __post_init__(self):
        if self.preferred == self.dispreferred:
            raise ValueError("a document cannot be preferred over itself")


@dataclass
class ClientUpdate:
    params: np.ndarray
    n_interactions: int
    interactions: list[Interaction] = field(default_factory=list, repr=False)


def sample_from_scores(scores: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """Plackett-Luce sampling without replacement, one uniform draw per slot."""
    scores = np.asarray(scores, dtype=np.float64)
    if k < 1:
        raise ValueError("k must be >= 1")
    if scores.size == 0:
        raise ValueError("no candidates to rank")
    if not np.all(np.isfinite(scores)):
        raise ValueError("non-finite document score")
    remaining = np.arange(scores.size)
    out = np.empty(min(k, scores.size), dtype=np.int64)
    for slot in range(out.size):
        s = scores[remaining]
        weights = np.exp(s - s.max())
        cum = np.cumsum(weights)
        pick = int(np.searchsorted(cum, rng.random() * cum[-1], side="right"))
        pick = min(pick, remaining.size - 1)
        out[slot] = remaining[pick]
        remaining = np.delete(remaining, pick)
    return out


def sample_serp(spec: ModelSpec, params, query: QueryGroup, k: int, rng: np.random.Generator) -> np.ndarray:
    return sample_from_scores(score_batch(spec, params, query.features), k, rng)


def infer_preferences(interaction: Interaction) -> list[PreferencePair]:
    """Clicked documents beat every unclicked document above them and the first unclicked one below the last click."""
    clicks = np.asarray(interaction.clicks)
    displayed = np.asarray(interaction.displayed)
    clicked = np.flatnonzero(clicks)
    if clicked.size == 0:
        return []
    last = clicked[-1]
    below = last + 1 if last + 1 < clicks.size else None
    pairs = []
    for pos in clicked.tolist():
        for other in range(pos):
            if not clicks[other]:
                pairs.append(PreferencePair(int(displayed[pos]), int(displayed[other])))
        if below is not None:
            pairs.append(PreferencePair(int(displayed[pos]), int(displayed[below])))
    return pairs


def _log_denominators(ranked_scores: np.ndarray, outside: float) -> np.ndarray:
    # log of the softmax normaliser at each slot: remaining displayed docs plus never-displayed ones
    suffix = np.logaddexp.accumulate(ranked_scores[..., ::-1], axis=-1)[..., ::-1]
    return np.logaddexp(suffix, outside)


def plackett_luce_log_prob(scores: np.ndarray, ranking) -> float:
    """Log-probability that Plackett-Luce sampling over ``scores`` starts with ``ranking``."""
    scores = np.asarray(scores, dtype=np.float64)
    ranking = np.asarray(ranking, dtype=np.int64)
    mask = np.ones(scores.size, dtype=bool)
    mask[ranking] = False
    outside = logsumexp(scores[mask]) if mask.any() else -np.inf
    ranked = scores[ranking]
    return float(ranked.sum() - _log_denominators(ranked, outside).sum())


def pair_weights_from_scores(scores: np.ndarray, serp, pairs: list[PreferencePair]) -> np.ndarray:
    """``P(R*) / (P(R) + P(R*))`` for each pair, R* being the SERP with the pair swapped."""
    if not pairs:
        return np.zeros(0)
    scores = np.asarray(scores, dtype=np.float64)
    serp = np.asarray(serp, dtype=np.int64)
    scores = scores - scores.max()
    mask = np.ones(scores.size, dtype=bool)
    mask[serp] = False
    outside = logsumexp(scores[mask]) if mask.any() else -np.inf

    position = {int(d): i for i, d in enumerate(serp.tolist())}
    ranked = scores[serp]
    swapped = np.tile(ranked, (len(pairs), 1))
    rows = np.arange(len(pairs))
    a = np.array([position[p.preferred] for p in pairs])
    b = np.array([position[p.dispreferred] for p in pairs])
    swapped[rows, a], swapped[rows, b] = ranked[b], ranked[a]

    # numerators are the same multiset in R and R*, only normalisers differ
    log_den = _log_denominators(ranked, outside).sum()
    log_den_swapped = _log_denominators(swapped, outside).sum(axis=1)
    return expit(log_den - log_den_swapped)


def pair_weight(spec: ModelSpec, params, query: QueryGroup, serp, pair: PreferencePair) -> float:
    scores = score_batch(spec, params, query.features)
    return float(pair_weights_from_scores(scores, serp, [pair])[0])


def pair_gradient(spec: ModelSpec, params, x_preferred, x_dispreferred) -> np.ndarray:
    """Gradient of ``exp(s_p) / (exp(s_p) + exp(s_d))`` with respect to the parameters."""
    feats = np.vstack([x_preferred, x_dispreferred])
    s = score_batch(spec, params, feats)
    grads = score_gradient_batch(spec, params, feats)
    p = expit(s[0] - s[1])
    return p * (1.0 - p) * (grads[0] - grads[1])


def pdgd_update(
    spec: ModelSpec,
    params,
    query: QueryGroup,
    click_model: ClickModel,
    eta: float,
    rng: np.random.Generator,
    k: int = SERP_LENGTH,
) -> tuple[np.ndarray, Interaction]:
    if eta <= 0:
        raise ValueError("eta must be positive")
    params = np.asarray(params, dtype=np.float64)
    scores = score_batch(spec, params, query.features)
    serp = sample_from_scores(scores, k, rng)
    result = simulate_session(click_model, query.labels[serp], rng)
    interaction = Interaction(query.query_id, serp, result.clicks)

    pairs = infer_preferences(interaction)
    if not pairs:
        return params.copy(), interaction

    rho = pair_weights_from_scores(scores, serp, pairs)
    pref = np.array([p.preferred for p in pairs])
    disp = np.array([p.dispreferred for p in pairs])
    sig = expit(scores[pref] - scores[disp])
    strength = rho * sig * (1.0 - sig)

    docs, inverse = np.unique(np.concatenate([pref, disp]), return_inverse=True)
    coef = np.zeros(docs.size)
    np.add.at(coef, inverse[: len(pairs)], strength)
    np.add.at(coef, inverse[len(pairs) :], -strength)
    grad = coef @ score_gradient_batch(spec, params, query.features[docs])
    return params + eta * grad, interaction


def client_update(
    spec: ModelSpec,
    params,
    train: Dataset,
    click_model: ClickModel,
    n_queries: int,
    eta: float,
    rng: np.random.Generator,
    k: int = SERP_LENGTH,
) -> ClientUpdate:
    """Run ``n_queries`` PDGD interactions on queries drawn uniformly with replacement."""
    if n_queries < 1:
        raise ValueError("n_queries must be >= 1")
    if len(train) == 0:
        raise ValueError("client has no training queries")
    params = np.array(params, dtype=np.float64)
    log = []
    for _ in range(n_queries):
        query = train.queries[int(rng.integers(len(train)))]
        params, interaction = pdgd_update(spec, params, query, click_model, eta, rng, k)
        log.append(interaction)
    return ClientUpdate(params, n_queries, log)
