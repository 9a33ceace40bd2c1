"""Experiment configuration: YAML loading, defaults, validation and dataset resolution."""
from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import yaml

from .aggregation import RULES, AggregatorSpec
from .attacks import ATTACKS, KNOWLEDGE, ThreatModel
from .clicks import BUILTIN_MODELS, ClickModel, builtin_model, model_from_config
from .data import (
    Dataset,
    load_letor,
    normalize_features,
    normalize_pair,
    split_train_test,
)
from .models import LINEAR, NEURAL, ModelSpec
from .synthetic import separable_dataset

log = logging.getLogger(__name__)

DATASET_KEYS = {
    "name", "train", "test", "path", "test_fraction", "split_seed",
    "normalize", "grade_levels", "synthetic",
}
SYNTHETIC_KEYS = {"n_queries", "docs_per_query", "n_features", "grade_levels", "seed", "quantiles"}


class ConfigError(ValueError):
    def __init__(self, problems: list[str]):
        self.problems = problems
        super().__init__("invalid experiment config:\n  - " + "\n  - ".join(problems))


@dataclass(frozen=True)
class ExperimentConfig:
    dataset: dict
    model: str = LINEAR
    hidden_dim: int = 64
    click_model: Any = "informational"
    n: int = 10
    m: int = 0
    attack: str = "none"
    knowledge: str = "partial"
    aggregator: str = "fedavg"
    defense_m: int | None = None
    f: int | None = None
    beta: int | None = None
    eta: float = 0.1
    n_queries: int = 5
    serp_length: int = 10
    k: int = 10
    rounds: int = 10_000
    eval_interval: int = 10
    repeats: int = 5
    seed: int = 0
    query_mode: str = "shared"
    fang_jitter: bool = True
    fang_b: float = 2.0
    final_window: int = 5
    output: str = "results"

    @property
    def dataset_name(self) -> str:
        ds = self.dataset
        if "name" in ds:
            return str(ds["name"])
        if "synthetic" in ds:
            return "synthetic"
        return Path(ds.get("path") or ds.get("train")).stem

    @property
    def click_model_name(self) -> str:
        return self.click_model if isinstance(self.click_model, str) else self.click_model.get("name", "custom")

    @property
    def threat(self) -> ThreatModel:
        return ThreatModel(self.n, self.m, self.knowledge, self.attack)

    @property
    def aggregator_spec(self) -> AggregatorSpec:
        m = self.m if self.defense_m is None else self.defense_m
        return AggregatorSpec(self.aggregator, m, self.f, self.beta)

    def model_spec(self, input_dim: int) -> ModelSpec:
        return ModelSpec(self.model, input_dim, self.hidden_dim)

    def benign_click_model(self, grade_levels: int) -> ClickModel:
        if isinstance(self.click_model, str):
            return builtin_model(self.click_model, grade_levels)
        return model_from_config(self.click_model, grade_levels)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def fingerprint(self) -> str:
        """Stable hash of everything that affects results (``output`` excluded)."""
        body = self.to_dict()
        body.pop("output")
        blob = json.dumps(body, sort_keys=True, default=str).encode()
        return hashlib.sha256(blob).hexdigest()[:12]

    def replace(self, **changes) -> ExperimentConfig:
        return validate(dataclasses.replace(self, **changes))


FIELDS = {f.name for f in dataclasses.fields(ExperimentConfig)}


def validate(cfg: ExperimentConfig, check_files: bool = True) -> ExperimentConfig:
    """Return ``cfg`` unchanged or raise :class:`ConfigError` listing every problem."""
    problems = []
    ds = cfg.dataset
    if not isinstance(ds, dict):
        problems.append("dataset must be a mapping")
        ds = {}
    unknown = set(ds) - DATASET_KEYS
    if unknown:
        problems.append(f"unknown dataset keys: {sorted(unknown)}")
    sources = [k for k in ("train", "path", "synthetic") if k in ds]
    if len(sources) != 1:
        problems.append("dataset needs exactly one of: train/test, path, synthetic")
    if "train" in ds and "test" not in ds:
        problems.append("dataset.train requires dataset.test")
    if "synthetic" in ds:
        extra = set(ds["synthetic"] or {}) - SYNTHETIC_KEYS
        if extra:
            problems.append(f"unknown synthetic keys: {sorted(extra)}")
    if check_files:
        for key in ("train", "test", "path"):
            if key in ds and not Path(ds[key]).is_file():
                problems.append(f"dataset.{key} not found: {ds[key]}")
    if "test_fraction" in ds and not 0 < float(ds["test_fraction"]) < 1:
        problems.append("dataset.test_fraction must be in (0, 1)")

    if cfg.model not in (LINEAR, NEURAL):
        problems.append(f"model must be linear or neural, got {cfg.model!r}")
    if isinstance(cfg.click_model, str):
        if cfg.click_model not in BUILTIN_MODELS:
            problems.append(f"unknown click_model {cfg.click_model!r}")
    elif not isinstance(cfg.click_model, dict) or not {"p_click", "p_stop"} <= set(cfg.click_model):
        problems.append("custom click_model needs p_click and p_stop maps")
    if cfg.n < 1:
        problems.append("n must be >= 1")
    if not (0 <= cfg.m and 2 * cfg.m < cfg.n):
        problems.append(f"m must satisfy 0 <= m < n/2 (collusion bound), got m={cfg.m}, n={cfg.n}")
    if cfg.attack not in ATTACKS:
        problems.append(f"unknown attack {cfg.attack!r}")
    elif cfg.attack != "none" and cfg.m == 0:
        problems.append(f"attack {cfg.attack!r} needs m >= 1")
    if cfg.knowledge not in KNOWLEDGE:
        problems.append(f"knowledge must be full or partial, got {cfg.knowledge!r}")
    if cfg.aggregator not in RULES:
        problems.append(f"unknown aggregator {cfg.aggregator!r}")
    else:
        try:
            problems.extend(cfg.aggregator_spec.check(cfg.n))
        except ValueError as exc:
            problems.append(str(exc))
    if cfg.attack == "fang_krum" and cfg.m > 0 and cfg.n - cfg.m - 2 < 1:
        problems.append("fang_krum needs n - m - 2 >= 1")
    if cfg.eta <= 0:
        problems.append("eta must be positive")
    for name in ("n_queries", "serp_length", "k", "eval_interval", "repeats", "hidden_dim", "final_window"):
        if getattr(cfg, name) < 1:
            problems.append(f"{name} must be >= 1")
    if cfg.rounds < 0:
        problems.append("rounds must be >= 0")
    if cfg.query_mode not in ("shared", "disjoint"):
        problems.append("query_mode must be shared or disjoint")
    if cfg.fang_b <= 1:
        problems.append("fang_b must exceed 1")
    if problems:
        raise ConfigError(problems)

    if cfg.attack == "fang_krum" and cfg.aggregator not in ("krum", "multi_krum"):
        log.warning("attack fang_krum is tailored to Krum but aggregator is %s", cfg.aggregator)
    if cfg.attack == "fang_trmean" and cfg.aggregator not in ("trimmed_mean", "median"):
        log.warning("attack fang_trmean is tailored to Trimmed Mean/Median but aggregator is %s", cfg.aggregator)
    return cfg


def config_from_dict(raw: dict, base_dir: Path | None = None, check_files: bool = True) -> ExperimentConfig:
    if not isinstance(raw, dict):
        raise ConfigError(["config must be a mapping"])
    unknown = set(raw) - FIELDS
    problems = [f"unknown key: {k}" for k in sorted(unknown)]
    if "dataset" not in raw:
        problems.append("missing required key: dataset")
    if problems:
        raise ConfigError(problems)
    raw = dict(raw)
    ds = dict(raw["dataset"]) if isinstance(raw["dataset"], dict) else raw["dataset"]
    if base_dir is not None and isinstance(ds, dict):
        for key in ("train", "test", "path"):
            if key in ds and not Path(ds[key]).is_absolute():
                ds[key] = str(base_dir / ds[key])
    raw["dataset"] = ds
    try:
        cfg = ExperimentConfig(**raw)
    except TypeError as exc:
        raise ConfigError([str(exc)]) from None
    return validate(cfg, check_files=check_files)


def load_config(path: str | Path, check_files: bool = True) -> ExperimentConfig:
    path = Path(path)
    raw = yaml.safe_load(path.read_text(encoding="utf-8")) or {}
    raw.pop("grid", None)
    return config_from_dict(raw, base_dir=path.parent, check_files=check_files)


def load_datasets(cfg: ExperimentConfig) -> tuple[Dataset, Dataset]:
    """Resolve the config's dataset block to a normalized (train, test) pair."""
    ds = cfg.dataset
    normalize = ds.get("normalize", True)
    grades = ds.get("grade_levels")
    name = cfg.dataset_name
    if "synthetic" in ds:
        params = dict(ds["synthetic"] or {})
        full = separable_dataset(name=name, **params)
    elif "path" in ds:
        full = load_letor(ds["path"], grade_levels=grades)
    else:
        train, test = load_letor(ds["train"], grades), load_letor(ds["test"], grades)
        levels = max(train.grade_levels, test.grade_levels)
        train, test = (Dataset(d.queries, d.feature_dim, levels, d.name) for d in (train, test))
        if normalize:
            train, test = normalize_pair(train, test)
        return _renamed(train, name), _renamed(test, name)
    if normalize:
        full = normalize_features(full)
    train, test = split_train_test(full, float(ds.get("test_fraction", 0.2)), int(ds.get("split_seed", 0)))
    return _renamed(train, name), _renamed(test, name)


def _renamed(d: Dataset, name: str) -> Dataset:
    return Dataset(d.queries, d.feature_dim, d.grade_levels, name=name)
