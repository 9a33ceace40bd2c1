"""Linear and single-hidden-layer scoring functions over a flat parameter vector.

Federation, attacks and aggregation only ever see the flat vector, so they
never need to know which architecture produced it.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

LINEAR = "linear"
NEURAL = "neural"


@dataclass(frozen=True)
class ModelSpec:
    kind: str
    input_dim: int
    hidden_dim: int = 64

    def __post_init__(self):
        if self.kind not in (LINEAR, NEURAL):
            raise ValueError(f"unknown model kind {self.kind!r}")
        if self.input_dim < 1:
            raise ValueError("input_dim must be positive")
        if self.kind == NEURAL and self.hidden_dim < 1:
            raise ValueError("hidden_dim must be positive")

    @property
    def n_params(self) -> int:
        if self.kind == LINEAR:
            return self.input_dim
        h = self.hidden_dim
        return self.input_dim * h + h + h + 1

    def describe(self) -> dict:
        out = {"kind": self.kind, "input_dim": self.input_dim}
        if self.kind == NEURAL:
            out.update(hidden_dim=self.hidden_dim, activation="relu", init="uniform_fan_in")
        return out


def unflatten(spec: ModelSpec, params: np.ndarray):
    """Split a neural parameter vector into ``(W, b_hidden, w_out, b_out)`` views.

    ``W`` has shape ``(hidden_dim, input_dim)``.
    """
    d, h = spec.input_dim, spec.hidden_dim
    W = params[: d * h].reshape(h, d)
    b_h = params[d * h : d * h + h]
    w_o = params[d * h + h : d * h + 2 * h]
    b_o = params[d * h + 2 * h]
    return W, b_h, w_o, b_o


def flatten(W, b_h, w_o, b_o) -> np.ndarray:
    return np.concatenate([np.ravel(W), np.ravel(b_h), np.ravel(w_o), np.atleast_1d(b_o)]).astype(np.float64)


def init_params(spec: ModelSpec, seed: int | np.random.SeedSequence | None = 0) -> np.ndarray:
    if spec.kind == LINEAR:
        return np.zeros(spec.input_dim)
    rng = np.random.default_rng(seed)
    d, h = spec.input_dim, spec.hidden_dim
    W = rng.uniform(-1.0 / np.sqrt(d), 1.0 / np.sqrt(d), size=(h, d))
    w_o = rng.uniform(-1.0 / np.sqrt(h), 1.0 / np.sqrt(h), size=h)
    return flatten(W, np.zeros(h), w_o, 0.0)


def _check(spec: ModelSpec, params: np.ndarray, features: np.ndarray):
    if params.shape != (spec.n_params,):
        raise ValueError(f"expected {spec.n_params} parameters, got shape {params.shape}")
    if features.shape[-1] != spec.input_dim:
        raise ValueError(f"expected {spec.input_dim} features, got {features.shape[-1]}")


def score_batch(spec: ModelSpec, params: np.ndarray, features: np.ndarray) -> np.ndarray:
    """Scores for a ``(n_docs, input_dim)`` matrix."""
    params = np.asarray(params, dtype=np.float64)
    features = np.asarray(features, dtype=np.float64)
    _check(spec, params, features)
    if spec.kind == LINEAR:
        return features @ params
    W, b_h, w_o, b_o = unflatten(spec, params)
    hidden = np.maximum(features @ W.T + b_h, 0.0)
    return hidden @ w_o + b_o


def score(spec: ModelSpec, params: np.ndarray, features: np.ndarray) -> float:
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 1:
        raise ValueError("score expects a single feature vector")
    return float(score_batch(spec, params, features[None, :])[0])


def score_gradient_batch(spec: ModelSpec, params: np.ndarray, features: np.ndarray) -> np.ndarray:
    """Per-document gradients of the score w.r.t. the flat parameters, shape ``(n_docs, n_params)``."""
    params = np.asarray(params, dtype=np.float64)
    features = np.asarray(features, dtype=np.float64)
    _check(spec, params, features)
    if spec.kind == LINEAR:
        return features.copy()
    W, b_h, w_o, _ = unflatten(spec, params)
    pre = features @ W.T + b_h
    active = (pre > 0).astype(np.float64)
    hidden = pre * active
    upstream = active * w_o  # d score / d pre-activation
    n = features.shape[0]
    dW = upstream[:, :, None] * features[:, None, :]
    return np.hstack([dW.reshape(n, -1), upstream, hidden, np.ones((n, 1))])


def score_gradient(spec: ModelSpec, params: np.ndarray, features: np.ndarray) -> np.ndarray:
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 1:
        raise ValueError("score_gradient expects a single feature vector")
    return score_gradient_batch(spec, params, features[None, :])[0]
