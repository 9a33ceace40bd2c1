"""SDBN click simulation with the perfect / navigational / informational / poison instantiations."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

import numpy as np

# (p_click, p_stop) per grade; 3-level tables are the MQ2007 variants.
_TABLES = {
    5: {
        "perfect": ([0.0, 0.2, 0.4, 0.8, 1.0], [0.0, 0.0, 0.0, 0.0, 0.0]),
        "navigational": ([0.05, 0.3, 0.5, 0.7, 0.95], [0.2, 0.3, 0.5, 0.7, 0.9]),
        "informational": ([0.4, 0.6, 0.7, 0.8, 0.9], [0.1, 0.2, 0.3, 0.4, 0.5]),
        "poison": ([1.0, 0.8, 0.4, 0.2, 0.0], [0.0, 0.0, 0.0, 0.0, 0.0]),
    },
    3: {
        "perfect": ([0.0, 0.5, 1.0], [0.0, 0.0, 0.0]),
        "navigational": ([0.05, 0.5, 0.95], [0.2, 0.5, 0.9]),
        "informational": ([0.4, 0.7, 0.9], [0.1, 0.3, 0.5]),
        "poison": ([1.0, 0.5, 0.0], [0.0, 0.0, 0.0]),
    },
}

BUILTIN_MODELS = ("perfect", "navigational", "informational", "poison")
BENIGN_MODELS = ("perfect", "navigational", "informational")


@dataclass(frozen=True)
class ClickModel:
    name: str
    p_click: tuple[float, ...]
    p_stop: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "p_click", tuple(float(p) for p in self.p_click))
        object.__setattr__(self, "p_stop", tuple(float(p) for p in self.p_stop))
        if len(self.p_click) != len(self.p_stop) or not self.p_click:
            raise ValueError("p_click and p_stop must be non-empty and of equal length")
        for p in self.p_click + self.p_stop:
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"probability {p} outside [0, 1]")

    @property
    def grade_levels(self) -> int:
        return len(self.p_click)


@dataclass
class ClickResult:
    clicks: np.ndarray
    stopped_at: int | None = None


def builtin_model(name: str, grade_levels: int) -> ClickModel:
    if grade_levels not in _TABLES:
        raise ValueError(f"no built-in click tables for {grade_levels} grade levels")
    try:
        click, stop = _TABLES[grade_levels][name]
    except KeyError:
        raise ValueError(f"unknown click model {name!r}") from None
    return ClickModel(name, click, stop)


def model_from_config(block: Mapping, grade_levels: int) -> ClickModel:
    """Build a custom model from ``{name, p_click: {grade: p}, p_stop: {grade: p}}``.

    Grades missing from a map are an error.
    """
    name = block.get("name", "custom")

    def table(key):
        mapping = {int(k): float(v) for k, v in dict(block[key]).items()}
        missing = set(range(grade_levels)) - set(mapping)
        if missing:
            raise ValueError(f"{key} is missing grades {sorted(missing)}")
        return [mapping[g] for g in range(grade_levels)]

    return ClickModel(name, table("p_click"), table("p_stop"))


def simulate_session(model: ClickModel, displayed_relevances, rng: np.random.Generator) -> ClickResult:
    """One top-to-bottom SDBN pass over the SERP.

    Each examined document consumes one uniform draw for the click decision,
    and each click one more for the stop decision, always in that order.
    """
    rels = np.asarray(displayed_relevances, dtype=np.int64)
    if rels.ndim != 1 or rels.size == 0:
        raise ValueError("SERP must be a non-empty 1-D sequence of grades")
    if rels.min() < 0 or rels.max() >= model.grade_levels:
        raise ValueError(f"relevance grade outside [0, {model.grade_levels - 1}]")
    clicks = np.zeros(rels.size, dtype=np.int64)
    for pos, rel in enumerate(rels.tolist()):
        if rng.random() < model.p_click[rel]:
            clicks[pos] = 1
            if rng.random() < model.p_stop[rel]:
                return ClickResult(clicks, pos)
    return ClickResult(clicks, None)
