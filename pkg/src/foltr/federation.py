"""Synchronous federated PDGD: broadcast, local updates, optional poisoning, aggregation, evaluation."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .aggregation import AggregatorSpec, krum_scores
from .attacks import (
    AttackContext,
    ThreatModel,
    apply_data_poison,
    fang_krum_craft,
    fang_trmean_craft,
    lie_craft,
)
from .clicks import ClickModel
from .config import ExperimentConfig, load_datasets
from .data import Dataset
from .metrics import MetricRecord, offline_eval
from .models import ModelSpec, init_params
from .pdgd import SERP_LENGTH, client_update

log = logging.getLogger(__name__)

# spawn-key namespaces so client, attacker and init streams never collide
_CLIENT, _ATTACK, _INIT = 0, 1, 2


def client_rng(seed: int, client: int, rnd: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(_CLIENT, client, rnd)))


def attack_rng(seed: int, rnd: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(_ATTACK, rnd)))


def init_seed(seed: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(seed, spawn_key=(_INIT,))


@dataclass
class FederationState:
    round: int
    global_params: np.ndarray
    seed: int
    roles: list[str]


@dataclass
class RoundTrace:
    round: int
    submitted: list[np.ndarray]
    counts: list[int]
    aggregated: np.ndarray
    attack: dict = field(default_factory=dict)
    krum_scores: list[float] | None = None

    def summary(self) -> dict:
        """JSON-friendly digest for the trace log."""
        out = {
            "round": self.round,
            "n": len(self.submitted),
            "submitted_norms": [float(np.linalg.norm(p)) for p in self.submitted],
            "aggregated_norm": float(np.linalg.norm(self.aggregated)),
        }
        if self.krum_scores is not None:
            out["krum_scores"] = self.krum_scores
        for key, value in self.attack.items():
            if key != "direction":
                out[f"attack_{key}"] = value
        return out


@dataclass
class Federation:
    """Everything that stays fixed across rounds."""

    spec: ModelSpec
    client_data: list[Dataset]
    click_models: list[ClickModel]
    threat: ThreatModel
    aggregator: AggregatorSpec
    eta: float = 0.1
    n_queries: int = 5
    serp_length: int = SERP_LENGTH
    fang_jitter: bool = True
    fang_b: float = 2.0

    def __post_init__(self):
        n = self.threat.n
        if len(self.client_data) != n or len(self.click_models) != n:
            raise ValueError(f"need data and a click model for each of the {n} clients")
        dims = {d.feature_dim for d in self.client_data}
        if dims != {self.spec.input_dim}:
            raise ValueError(f"client feature dims {sorted(dims)} do not match model input {self.spec.input_dim}")
        problems = self.aggregator.check(n)
        if problems:
            raise ValueError("; ".join(problems))


def partition_queries(train: Dataset, n: int, mode: str, seed: int) -> list[Dataset]:
    """Shared pool (every client sees all training queries) or a seeded disjoint partition."""
    if mode == "shared":
        return [train] * n
    if len(train) < n:
        raise ValueError(f"cannot split {len(train)} queries over {n} clients")
    perm = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(3,))).permutation(len(train))
    return [train.subset(sorted(perm[i::n].tolist())) for i in range(n)]


def _poison(fed: Federation, state: FederationState, before: list[np.ndarray]) -> tuple[list[np.ndarray], dict]:
    threat = fed.threat
    n, m = threat.n, threat.m
    known = before if threat.knowledge == "full" else before[:m]
    ctx = AttackContext([p.copy() for p in known], state.global_params.copy(), fed.aggregator)
    rng = attack_rng(state.seed, state.round)
    if threat.attack == "lie":
        crafted = lie_craft(before[:m], n, m)
        return [crafted.copy() for _ in range(m)], {"crafted_norm": float(np.linalg.norm(crafted))}
    if threat.attack == "fang_krum":
        res = fang_krum_craft(ctx, n, m, rng, knowledge=threat.knowledge, jitter=fed.fang_jitter)
        if not res.info["success"]:
            log.warning("round %d: fang_krum lambda search did not reach selection", state.round)
    else:
        res = fang_trmean_craft(ctx, n, m, rng, knowledge=threat.knowledge, b=fed.fang_b)
    info = {k: v for k, v in res.info.items() if k != "direction"}
    info["crafted_norm"] = float(np.mean([np.linalg.norm(u) for u in res.updates]))
    return res.updates, info


def run_round(state: FederationState, fed: Federation) -> tuple[FederationState, RoundTrace]:
    """One synchronous round: every client trains from the same broadcast, then the server aggregates."""
    threat = fed.threat
    broadcast = state.global_params
    updates = []
    for u in range(threat.n):
        try:
            updates.append(
                client_update(
                    fed.spec, broadcast, fed.client_data[u], fed.click_models[u],
                    fed.n_queries, fed.eta, client_rng(state.seed, u, state.round), fed.serp_length,
                )
            )
        except Exception as exc:
            raise RuntimeError(f"round {state.round}, client {u}: {exc}") from exc

    submitted = [up.params for up in updates]
    counts = [up.n_interactions for up in updates]
    attack_info = {}
    if threat.attack in ("lie", "fang_krum", "fang_trmean"):
        crafted, attack_info = _poison(fed, state, submitted)
        submitted = crafted + submitted[threat.m :]

    aggregated = fed.aggregator.aggregate(submitted, counts)
    if not np.all(np.isfinite(aggregated)):
        raise FloatingPointError(f"round {state.round}: aggregated parameters are not finite")
    scores = None
    if fed.aggregator.rule in ("krum", "multi_krum"):
        scores = krum_scores(submitted, fed.aggregator.m).tolist()
    trace = RoundTrace(state.round, submitted, counts, aggregated, attack_info, scores)
    return FederationState(state.round + 1, aggregated, state.seed, state.roles), trace


def build_federation(cfg: ExperimentConfig, train: Dataset, seed: int) -> Federation:
    threat = cfg.threat
    spec = cfg.model_spec(train.feature_dim)
    benign = cfg.benign_click_model(train.grade_levels)
    return Federation(
        spec=spec,
        client_data=partition_queries(train, threat.n, cfg.query_mode, seed),
        click_models=apply_data_poison(threat, benign),
        threat=threat,
        aggregator=cfg.aggregator_spec,
        eta=cfg.eta,
        n_queries=cfg.n_queries,
        serp_length=cfg.serp_length,
        fang_jitter=cfg.fang_jitter,
        fang_b=cfg.fang_b,
    )


def run_experiment(
    cfg: ExperimentConfig,
    seed: int | None = None,
    datasets: tuple[Dataset, Dataset] | None = None,
    on_trace: Callable[[RoundTrace], None] | None = None,
) -> list[MetricRecord]:
    """Train for ``cfg.rounds`` rounds, evaluating nDCG@k on the test split every ``eval_interval`` rounds.

    Round 0 is the initial ranker; records land on multiples of the interval.
    """
    seed = cfg.seed if seed is None else seed
    train, test = datasets if datasets is not None else load_datasets(cfg)
    fed = build_federation(cfg, train, seed)
    fingerprint = cfg.fingerprint()
    state = FederationState(0, init_params(fed.spec, init_seed(seed)), seed, fed.threat.roles)

    def record():
        ndcg = offline_eval(fed.spec, state.global_params, test, cfg.k)
        return MetricRecord(state.round, ndcg, fingerprint, seed)

    records = [record()]
    while state.round < cfg.rounds:
        state, trace = run_round(state, fed)
        if on_trace is not None:
            on_trace(trace)
        if state.round % cfg.eval_interval == 0:
            records.append(record())
    return records
