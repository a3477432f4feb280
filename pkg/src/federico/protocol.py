"""Decentralized round engine.

Each round every client

1. picks M neighbors with an epsilon-greedy rule over its current weights,
2. receives their models and scores them (and its own) on its training data
   (or on a held-out part of it, when configured),
3. folds those losses into its tracker and recomputes its weights,
4. returns to each neighbor ``b`` the gradient of its own data loss w.r.t.
   ``phi_b``, scaled by its weight on ``b``,
5. steps its own model with the sum of the weighted gradients it received,
   plus the self term ``w_ii * grad`` which costs no communication.

All cross-client traffic goes through ``Transport`` so it can be counted and
checked. Clients only touch their own state inside a phase, which lets the
phases run on a thread pool without changing any result.
"""
from __future__ import annotations

import threading
from collections import defaultdict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .data import Samples
from .errors import ConfigError, NumericFailure, ProtocolIntegrityError
from .mixture import MixtureState, fresh_state, observe_losses
from .models import ModelSpec, batch_loss, grad, init_params, make_optimizer, optimizer_step

MODEL_PAYLOAD = "model_payload"
GRADIENT_PAYLOAD = "gradient_payload"


@dataclass(frozen=True)
class SamplerConfig:
    M: int = 3
    epsilon: float = 0.3

    def validate(self, K):
        if not 0.0 <= self.epsilon <= 1.0:
            raise ConfigError("must lie in [0, 1]", key="sampler.epsilon")
        if not 1 <= self.M <= K - 1:
            raise ConfigError(f"must lie in [1, {K - 1}] for K={K}", key="sampler.M")


@dataclass(frozen=True)
class RoundConfig:
    sampler: SamplerConfig
    lr: float = 0.01
    local_steps: int = 1
    loss_kind: str = "mse"
    loss_reduction: str = "sum"
    batch_size: Optional[int] = None


@dataclass(frozen=True)
class RoundMessage:
    kind: str
    sender: int
    recipient: int
    round: int
    body: np.ndarray
    step: int = 0


class Transport:
    """Lossless in-memory mailbox keyed by recipient, round, kind and step."""

    def __init__(self):
        self._lock = threading.Lock()
        self._boxes = defaultdict(list)
        self.bytes_sent = 0
        self.messages_sent = 0

    def send(self, msg: RoundMessage):
        with self._lock:
            self._boxes[(msg.recipient, msg.round, msg.kind, msg.step)].append(msg)
            self.bytes_sent += msg.body.nbytes
            self.messages_sent += 1

    def collect(self, recipient, round, kind, step=0, expect=None) -> list[RoundMessage]:
        """Take every pending message for a mailbox, ordered by sender.

        ``expect`` is the exact set of senders that must be present.
        """
        with self._lock:
            msgs = self._boxes.pop((recipient, round, kind, step), [])
        msgs.sort(key=lambda m: m.sender)
        senders = [m.sender for m in msgs]
        if len(set(senders)) != len(senders):
            raise ProtocolIntegrityError(
                f"duplicate {kind} for client {recipient} in round {round}: {senders}")
        if expect is not None and set(senders) != set(expect):
            raise ProtocolIntegrityError(
                f"client {recipient} expected {kind} from {sorted(expect)} in round {round}, "
                f"got {senders}")
        return msgs

    def pending(self) -> int:
        with self._lock:
            return sum(len(v) for v in self._boxes.values())


@dataclass
class ClientNode:
    id: int
    spec: ModelSpec
    params: np.ndarray
    mixture: MixtureState
    opt: object
    train: Samples
    rng: np.random.Generator
    # Data used to score models for the weights; None means the training set.
    holdout: Optional[Samples] = None

    @property
    def score_set(self) -> Samples:
        return self.train if self.holdout is None else self.holdout

    @property
    def all_train(self) -> Samples:
        """Training and held-out samples together."""
        if self.holdout is None:
            return self.train
        return Samples(np.concatenate([self.train.x, self.holdout.x]),
                       np.concatenate([self.train.y, self.holdout.y]))


@dataclass
class RoundTrace:
    round: int
    neighbors: list
    train_loss: np.ndarray
    weights: np.ndarray
    bytes_sent: int
    all_to_all_bytes: int
    messages: int = 0


def client_rngs(seed: int, client: int):
    """(init stream, protocol stream) for one client; both depend on (seed, client) only."""
    return np.random.default_rng([seed, client, 0]), np.random.default_rng([seed, client, 1])


def _hold_out(train, frac, seed, client):
    """Split ``train`` into (fit, holdout) with ``round(frac * n)`` held out, at least one each."""
    n = len(train[0])
    if n < 2:
        raise ConfigError(f"client {client} has too few samples to hold any out",
                          key="tracker.holdout_frac")
    k = min(max(int(round(frac * n)), 1), n - 1)
    perm = np.random.default_rng([seed, client, 2]).permutation(n)
    held, fit = np.sort(perm[:k]), np.sort(perm[k:])
    X, Y = train
    return Samples(X[fit], Y[fit]), Samples(X[held], Y[held])


def build_nodes(trains, spec: ModelSpec, seed: int, tracker_mode="ema", beta=0.6,
                optimizer="adam", holdout_frac=0.0) -> list[ClientNode]:
    """One node per training set; ``holdout_frac > 0`` reserves part of it for scoring."""
    if not 0.0 <= holdout_frac < 1.0:
        raise ConfigError("must lie in [0, 1)", key="tracker.holdout_frac")
    K = len(trains)
    nodes = []
    for i, train in enumerate(trains):
        init_rng, rng = client_rngs(seed, i)
        fit, holdout = Samples(train[0], train[1]), None
        if holdout_frac > 0:
            fit, holdout = _hold_out(train, holdout_frac, seed, i)
        nodes.append(ClientNode(
            id=i, spec=spec, params=init_params(spec, init_rng),
            mixture=fresh_state(K, tracker_mode, beta), opt=make_optimizer(optimizer),
            train=fit, rng=rng, holdout=holdout,
        ))
    return nodes


def sample_neighbors(weights, self_id: int, cfg: SamplerConfig, rng: np.random.Generator) -> list[int]:
    """Epsilon-greedy choice of M distinct neighbors, excluding ``self_id``.

    Each slot explores (uniform over the remaining candidates) with probability
    epsilon and otherwise exploits the remaining candidate of largest weight,
    lowest id first on ties. ``weights`` may be a MixtureState.
    """
    if isinstance(weights, MixtureState):
        weights = weights.weights
    weights = np.asarray(weights, dtype=np.float64)
    K = weights.shape[0]
    cfg.validate(K)
    remaining = [j for j in range(K) if j != self_id]
    chosen = []
    for _ in range(cfg.M):
        if cfg.epsilon > 0.0 and rng.random() < cfg.epsilon:
            pick = remaining[int(rng.integers(len(remaining)))]
        else:
            pick = remaining[int(np.argmax(weights[remaining]))]
        remaining.remove(pick)
        chosen.append(pick)
    return chosen


def _pmap(executor, fn, items):
    if executor is None:
        return [fn(x) for x in items]
    return list(executor.map(fn, items))


def run_round(nodes: list[ClientNode], transport: Transport, cfg: RoundConfig, round_idx: int,
              executor: Optional[ThreadPoolExecutor] = None) -> RoundTrace:
    """Advance every node by one round in place and return the round's trace."""
    K = len(nodes)
    start_bytes, start_msgs = transport.bytes_sent, transport.messages_sent
    neighbors = [sample_neighbors(n.mixture.weights, n.id, cfg.sampler, n.rng) for n in nodes]
    requesters = [[] for _ in range(K)]
    for i, B in enumerate(neighbors):
        for b in B:
            requesters[b].append(i)

    def send_models(step):
        for b, node in enumerate(nodes):
            for i in requesters[b]:
                transport.send(RoundMessage(MODEL_PAYLOAD, b, i, round_idx, node.params.copy(), step))

    def estep(node):
        msgs = transport.collect(node.id, round_idx, MODEL_PAYLOAD, 0, expect=neighbors[node.id])
        received = {m.sender: m.body for m in msgs}
        X, Y = node.score_set
        own = batch_loss(node.spec, node.params, cfg.loss_kind, X, Y, cfg.loss_reduction)
        observed = {node.id: own}
        for b, params in received.items():
            observed[b] = batch_loss(node.spec, params, cfg.loss_kind, X, Y, cfg.loss_reduction)
        node.mixture = observe_losses(node.mixture, observed, client=node.id, round=round_idx)
        return own, received

    def send_grads(node, received, step):
        X, Y = node.train
        if cfg.batch_size is not None and cfg.batch_size < len(X):
            idx = np.sort(node.rng.choice(len(X), size=cfg.batch_size, replace=False))
            X, Y = X[idx], Y[idx]
        w = node.mixture.weights
        for b, params in received.items():
            g = w[b] * grad(node.spec, params, cfg.loss_kind, X, Y, cfg.loss_reduction)
            if not np.all(np.isfinite(g)):
                raise NumericFailure(f"non-finite gradient for model {b}", round=round_idx,
                                     client=node.id)
            transport.send(RoundMessage(GRADIENT_PAYLOAD, node.id, b, round_idx, g, step))
        return w[node.id] * grad(node.spec, node.params, cfg.loss_kind, X, Y, cfg.loss_reduction)

    def apply(node, own_grad, step):
        msgs = transport.collect(node.id, round_idx, GRADIENT_PAYLOAD, step,
                                 expect=requesters[node.id])
        total = np.zeros_like(node.params)
        # Summation order is fixed by sender id, the self term sits at its own id.
        pending_self = True
        for m in msgs:
            if pending_self and m.sender > node.id:
                total = total + own_grad
                pending_self = False
            total = total + m.body
        if pending_self:
            total = total + own_grad
        node.params = optimizer_step(node.opt, node.params, total, cfg.lr,
                                     round=round_idx, client=node.id)

    send_models(0)
    estep_out = _pmap(executor, estep, nodes)
    train_loss = np.array([own for own, _ in estep_out])
    received = [r for _, r in estep_out]
    for step in range(cfg.local_steps):
        if step > 0:
            send_models(step)
            received = [
                {m.sender: m.body for m in transport.collect(
                    n.id, round_idx, MODEL_PAYLOAD, step, expect=neighbors[n.id])}
                for n in nodes
            ]
        own_grads = _pmap(executor, lambda n: send_grads(n, received[n.id], step), nodes)
        _pmap(executor, lambda n: apply(n, own_grads[n.id], step), nodes)

    if transport.pending():
        raise ProtocolIntegrityError(f"undelivered messages after round {round_idx}")
    d_bytes = nodes[0].params.nbytes
    return RoundTrace(
        round=round_idx,
        neighbors=[list(B) for B in neighbors],
        train_loss=train_loss,
        weights=np.stack([n.mixture.weights for n in nodes]),
        bytes_sent=transport.bytes_sent - start_bytes,
        all_to_all_bytes=2 * K * (K - 1) * d_bytes * cfg.local_steps,
        messages=transport.messages_sent - start_msgs,
    )


def run_rounds(nodes: list[ClientNode], cfg: RoundConfig, T: int, workers: int = 1,
               on_round=None, start_round: int = 1) -> list[RoundTrace]:
    """Run ``T`` synchronous rounds; ``on_round(trace, nodes)`` fires after each."""
    if nodes:
        cfg.sampler.validate(len(nodes))
    transport = Transport()
    traces = []
    executor = ThreadPoolExecutor(max_workers=workers) if workers > 1 else None
    try:
        for t in range(start_round, start_round + T):
            trace = run_round(nodes, transport, cfg, t, executor)
            traces.append(trace)
            if on_round is not None:
                on_round(trace, nodes)
    finally:
        if executor is not None:
            executor.shutdown()
    return traces
