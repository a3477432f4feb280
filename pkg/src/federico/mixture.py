"""Per-client mixture weights over the K client models.

A client keeps one loss per model. Weights are always the softmax of the
negated tracked losses, either summed over rounds (``accumulative``) or
blended with an exponential moving average (``ema``). Entries that were not
refreshed this round reuse the last loss seen for that model.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Mapping

import numpy as np

from .errors import ConfigError, NumericFailure
from .models import predict_batch

TRACKER_MODES = ("accumulative", "ema")


def softmax(z) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    e = np.exp(z - z.max())
    return e / e.sum()


def neg_softmax(losses) -> np.ndarray:
    return softmax(-np.asarray(losses, dtype=np.float64))


@dataclass(frozen=True)
class LossTracker:
    mode: str
    values: np.ndarray
    last_observed: np.ndarray
    beta: float = 0.6

    def __post_init__(self):
        if self.mode not in TRACKER_MODES:
            raise ConfigError(f"unknown tracker mode {self.mode!r}", key="tracker.mode")
        if self.mode == "ema" and not 0.0 <= self.beta < 1.0:
            raise ConfigError("beta must lie in [0, 1)", key="tracker.beta")


@dataclass(frozen=True)
class MixtureState:
    weights: np.ndarray
    prior: np.ndarray
    tracker: LossTracker

    @property
    def K(self):
        return self.weights.shape[0]


def fresh_state(K: int, mode: str = "ema", beta: float = 0.6) -> MixtureState:
    """Uniform weights, zero tracked and carried losses."""
    w = np.full(K, 1.0 / K)
    tracker = LossTracker(mode, np.zeros(K), np.zeros(K), beta)
    return MixtureState(w, w.copy(), tracker)


def observe_losses(state: MixtureState, observed: Mapping[int, float], client=None,
                   round=None) -> MixtureState:
    """Refresh the given entries, blend every entry, recompute the weights."""
    K = state.K
    last = state.tracker.last_observed.copy()
    for j, value in observed.items():
        if not 0 <= j < K:
            raise ConfigError(f"loss reported for unknown client {j}")
        if not np.isfinite(value):
            raise NumericFailure(f"non-finite loss for model {j}", round=round, client=client)
        last[j] = value
    tr = state.tracker
    if tr.mode == "ema":
        values = (1.0 - tr.beta) * tr.values + tr.beta * last
    else:
        values = tr.values + last
    w = neg_softmax(values)
    return MixtureState(w, w.copy(), replace(tr, values=values, last_observed=last))


def posterior_from_scratch(prior, losses) -> np.ndarray:
    """Normalized ``prior * exp(-losses)``, computed in the log domain.

    Zero prior entries stay exactly zero.
    """
    prior = np.asarray(prior, dtype=np.float64)
    losses = np.asarray(losses, dtype=np.float64)
    if prior.shape != losses.shape:
        raise ConfigError("prior and losses differ in length")
    if np.any(prior < 0) or abs(prior.sum() - 1.0) > 1e-9:
        raise ConfigError("prior must lie on the simplex")
    support = prior > 0
    logits = np.full(prior.shape, -np.inf)
    logits[support] = np.log(prior[support]) - losses[support]
    out = np.zeros_like(prior)
    out[support] = softmax(logits[support])
    return out


def mixture_predict(weights, models, x) -> np.ndarray:
    """Convex combination of model outputs for one input or a batch.

    ``models`` is a sequence of ``(ModelSpec, params)`` pairs. A 1-D ``x``
    returns one output vector; a 2-D batch returns ``(n, output_dim)``.
    """
    weights = np.asarray(weights, dtype=np.float64)
    if weights.shape[0] != len(models):
        raise ConfigError(f"{weights.shape[0]} weights for {len(models)} models")
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    out = None
    for w, (spec, params) in zip(weights, models):
        if w == 0.0:
            continue
        pred = predict_batch(spec, params, x.reshape(1, -1) if single else x)
        out = w * pred if out is None else out + w * pred
    if out is None:
        raise ConfigError("all mixture weights are zero")
    return out[0] if single else out


def evaluate(weights, models, test, metric: str) -> float:
    """Accuracy or mean squared error of the mixture on ``(x, y)`` data."""
    x, y = test[0], test[1]
    if len(x) == 0:
        raise ConfigError("empty test set")
    pred = mixture_predict(weights, models, x)
    if metric == "accuracy":
        return float(np.mean(np.argmax(pred, axis=1) == np.asarray(y).reshape(-1)))
    if metric == "mse":
        diff = pred - np.asarray(y, dtype=np.float64).reshape(pred.shape)
        return float(np.mean(np.sum(diff * diff, axis=1)))
    raise ConfigError(f"unknown metric {metric!r}", key="metric")
