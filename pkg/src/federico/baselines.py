"""Comparison methods: local-only training, FedAvg and FedAvg with local tuning.

They take the same ``ClientNode`` list as the round engine, so initial
parameters, optimizers and mini-batch streams match the paired run. Nodes are
updated in place.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError
from .models import batch_loss, grad, make_optimizer, optimizer_step

BASELINE_KINDS = ("local_only", "fedavg", "fedavg_plus")


@dataclass
class BaselineResult:
    params: list
    train_loss: list = field(default_factory=list)
    bytes_sent: list = field(default_factory=list)
    global_params: np.ndarray = None


def _batch(node, batch_size):
    # Baselines keep no weights, so a held-out scoring set goes back into training.
    X, Y = node.all_train
    if batch_size is not None and batch_size < len(X):
        idx = np.sort(node.rng.choice(len(X), size=batch_size, replace=False))
        return X[idx], Y[idx]
    return X, Y


def _local_step(node, params, lr, loss_kind, reduction, batch_size, round):
    X, Y = _batch(node, batch_size)
    g = grad(node.spec, params, loss_kind, X, Y, reduction)
    return optimizer_step(node.opt, params, g, lr, round=round, client=node.id)


def _own_losses(nodes, params, loss_kind, reduction):
    return np.array([batch_loss(n.spec, p, loss_kind, n.all_train[0], n.all_train[1], reduction)
                     for n, p in zip(nodes, params)])


def run_local(nodes, T, lr, loss_kind="mse", reduction="sum", batch_size=None,
              on_round=None) -> BaselineResult:
    """Every client runs T optimizer steps on its own data; nothing is exchanged."""
    result = BaselineResult(params=[n.params for n in nodes])
    for t in range(1, T + 1):
        result.train_loss.append(_own_losses(nodes, [n.params for n in nodes], loss_kind, reduction))
        for n in nodes:
            n.params = _local_step(n, n.params, lr, loss_kind, reduction, batch_size, t)
        result.bytes_sent.append(0)
        if on_round is not None:
            on_round(t, [n.params for n in nodes])
    result.params = [n.params.copy() for n in nodes]
    return result


def weighted_average(params, sizes) -> np.ndarray:
    """Parameter average weighted by ``n_i / n``.

    Each coordinate is summed with ``math.fsum`` so the result does not depend
    on client order.
    """
    sizes = np.asarray(sizes, dtype=np.float64)
    scaled = np.stack([p * (s / sizes.sum()) for p, s in zip(params, sizes)])
    return np.array([math.fsum(col) for col in scaled.T])


def run_fedavg(nodes, T, lr, local_steps=1, loss_kind="mse", reduction="sum", batch_size=None,
               on_round=None) -> BaselineResult:
    """Single global model, started from client 0's initial parameters.

    Each client keeps its own optimizer state across rounds.
    """
    if local_steps < 1:
        raise ConfigError("must be at least 1", key="local_steps")
    sizes = [len(n.all_train[0]) for n in nodes]
    g = nodes[0].params.copy()
    d_bytes = g.nbytes
    result = BaselineResult(params=[g] * len(nodes))
    for t in range(1, T + 1):
        result.train_loss.append(_own_losses(nodes, [g] * len(nodes), loss_kind, reduction))
        local = []
        for n in nodes:
            p = g.copy()
            for _ in range(local_steps):
                p = _local_step(n, p, lr, loss_kind, reduction, batch_size, t)
            local.append(p)
        g = weighted_average(local, sizes)
        result.bytes_sent.append(2 * len(nodes) * d_bytes)
        if on_round is not None:
            on_round(t, [g] * len(nodes))
    for n in nodes:
        n.params = g.copy()
    result.global_params = g
    result.params = [g.copy() for _ in nodes]
    return result


def fine_tune(nodes, start, epochs, lr, loss_kind="mse", reduction="sum", batch_size=None,
              round=None) -> list:
    """``epochs`` local steps from ``start`` on every client; lr 0 is a no-op."""
    if epochs < 1:
        raise ConfigError("must be at least 1", key="fine_tune_epochs")
    out = []
    for n in nodes:
        p = start.copy()
        if lr > 0:
            for _ in range(epochs):
                p = _local_step(n, p, lr, loss_kind, reduction, batch_size, round)
        n.params = p
        out.append(p.copy())
    return out


def run_fedavg_plus(nodes, T, lr, local_steps=1, fine_tune_epochs=1, fine_tune_lr=None,
                    loss_kind="mse", reduction="sum", batch_size=None,
                    on_round=None) -> BaselineResult:
    """FedAvg followed by per-client fine-tuning (same learning rate by default)."""
    result = run_fedavg(nodes, T, lr, local_steps, loss_kind, reduction, batch_size, on_round)
    ft_lr = lr if fine_tune_lr is None else fine_tune_lr
    result.params = fine_tune(nodes, result.global_params, fine_tune_epochs, ft_lr, loss_kind,
                              reduction, batch_size, round=T + 1)
    return result
