"""All-to-all EM over client-level mixtures, used as the correctness oracle.

Single-threaded and written for clarity. ``datasets`` is a list of ``(X, Y)``
training pairs, one per client, and all clients share one ``ModelSpec``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, NumericFailure
from .mixture import posterior_from_scratch
from .models import ModelSpec, batch_loss, grad, init_params

RIDGE_FLOOR = 1e-8


@dataclass
class GlobalState:
    phi: list
    pi: np.ndarray
    round: int = 0

    def __post_init__(self):
        self.pi = np.asarray(self.pi, dtype=np.float64)
        K = len(self.phi)
        if self.pi.shape != (K, K):
            raise ConfigError(f"prior matrix must be {K}x{K}")
        if np.any(self.pi < 0) or np.any(np.abs(self.pi.sum(axis=1) - 1.0) > 1e-9):
            raise ConfigError("prior rows must lie on the simplex")


def initial_state(phi) -> GlobalState:
    K = len(phi)
    return GlobalState([np.asarray(p, dtype=np.float64).copy() for p in phi], np.full((K, K), 1.0 / K))


def loss_matrix(spec: ModelSpec, phi, datasets, loss_kind, reduction="sum") -> np.ndarray:
    """``L[i, j]`` = loss of model j on client i's data."""
    K = len(phi)
    L = np.empty((K, K))
    for i, (X, Y) in enumerate(datasets):
        for j in range(K):
            L[i, j] = batch_loss(spec, phi[j], loss_kind, X, Y, reduction)
    return L


def e_step(state: GlobalState, spec, datasets, loss_kind, reduction="sum") -> np.ndarray:
    L = loss_matrix(spec, state.phi, datasets, loss_kind, reduction)
    return np.stack([posterior_from_scratch(state.pi[i], L[i]) for i in range(len(state.phi))])


def m_step_pi(W) -> np.ndarray:
    return np.array(W, dtype=np.float64, copy=True)


def m_step_phi_gradient(state: GlobalState, W, spec, datasets, loss_kind, lr,
                        reduction="sum") -> list:
    """One aggregated gradient step on every model.

    Model i moves by ``-lr * sum_j W[j, i] * grad_i(loss on client j's data)``,
    summed in increasing j.
    """
    W = np.asarray(W)
    new_phi = []
    for i, phi_i in enumerate(state.phi):
        total = np.zeros_like(phi_i)
        for j, (X, Y) in enumerate(datasets):
            total = total + W[j, i] * grad(spec, phi_i, loss_kind, X, Y, reduction)
        if not np.all(np.isfinite(total)):
            raise NumericFailure("non-finite aggregated gradient", round=state.round, client=i)
        new_phi.append(phi_i - lr * total)
    return new_phi


def _design(X):
    return np.hstack([X, np.ones((X.shape[0], 1))])


def m_step_phi_exact_linear(state: GlobalState, W, spec, datasets) -> list:
    """Weighted least squares per model via ridge-floored normal equations.

    Model j minimizes ``sum_i W[i, j] * sum_s 0.5 * ||W_j x + b_j - y||^2``.
    Requires linear_regression with mse loss.
    """
    if spec.kind != "linear_regression":
        raise ConfigError("exact M-step needs linear_regression models", key="model.kind")
    W = np.asarray(W)
    D = spec.input_dim + 1
    designs = [_design(np.asarray(X, dtype=np.float64)) for X, _ in datasets]
    targets = [np.asarray(Y, dtype=np.float64).reshape(len(X), -1) for X, Y in datasets]
    new_phi = []
    for j in range(len(state.phi)):
        A = RIDGE_FLOOR * np.eye(D)
        B = np.zeros((D, spec.output_dim))
        for i, (Z, Y) in enumerate(zip(designs, targets)):
            A += W[i, j] * Z.T @ Z
            B += W[i, j] * Z.T @ Y
        coef = np.linalg.solve(A, B)  # (D, output_dim)
        weight, bias = coef[:-1].T, coef[-1]
        new_phi.append(np.concatenate([weight.ravel(), bias]))
    return new_phi


def weighted_objective(phi, W, spec, datasets, loss_kind, reduction="sum") -> float:
    """``sum_ij W[i, j] * loss(model j on client i)``."""
    return float(np.sum(np.asarray(W) * loss_matrix(spec, phi, datasets, loss_kind, reduction)))


def _xlogy(w, v):
    w = np.asarray(w, dtype=np.float64)
    out = np.zeros_like(w)
    nz = w > 0
    out[nz] = w[nz] * np.log(v[nz])
    return out


def variational_bound(state: GlobalState, W, spec, datasets, loss_kind, reduction="sum") -> float:
    """Lower bound up to an additive constant, divided by the total sample count.

    ``sum_ij W_ij * (-loss_ij + log Pi_ij - log W_ij) / n`` with ``0 log 0 = 0``.
    """
    W = np.asarray(W, dtype=np.float64)
    n = sum(len(X) for X, _ in datasets)
    L = loss_matrix(spec, state.phi, datasets, loss_kind, reduction)
    with np.errstate(divide="ignore"):
        total = -np.sum(W * L) + np.sum(_xlogy(W, state.pi)) - np.sum(_xlogy(W, W))
    return float(total / n)


@dataclass
class EMTrace:
    weights: list = field(default_factory=list)
    phi: list = field(default_factory=list)
    bounds: list = field(default_factory=list)


def run_reference_em(phi0, spec, datasets, loss_kind, iterations, lr=0.01, m_step="gradient",
                     reduction="sum") -> tuple[GlobalState, EMTrace]:
    """Alternate E-step, prior update and a gradient or exact model update.

    The trace records, per iteration, the posterior, the updated models and
    the bound evaluated at the updated parameters with that posterior.
    """
    if m_step not in ("gradient", "exact"):
        raise ConfigError(f"unknown M-step {m_step!r}", key="m_step")
    state = initial_state(phi0)
    trace = EMTrace()
    for _ in range(iterations):
        W = e_step(state, spec, datasets, loss_kind, reduction)
        if m_step == "gradient":
            phi = m_step_phi_gradient(state, W, spec, datasets, loss_kind, lr, reduction)
        else:
            phi = m_step_phi_exact_linear(state, W, spec, datasets)
        state = GlobalState(phi, m_step_pi(W), state.round + 1)
        trace.weights.append(W)
        trace.phi.append([p.copy() for p in phi])
        trace.bounds.append(variational_bound(state, W, spec, datasets, loss_kind, reduction))
    return state, trace


def random_phi(spec, K, seed) -> list:
    rng = np.random.default_rng(seed)
    return [init_params(spec, rng) for _ in range(K)]
