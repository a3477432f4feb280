"""Build clients from a config and run one method end to end.

Every method draws the same client datasets (``data.seed``) and the same
initial parameters and client random streams (``seed``), so runs that differ
only in ``method`` form a paired comparison.
"""
from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import baselines
from .config import ExperimentConfig, resolve
from .data import gen_cluster_classification, gen_sine_clients, load_csv_pool, \
    partition_by_labels, partition_dirichlet
from .em_reference import loss_matrix, run_reference_em
from .mixture import evaluate
from .models import ModelSpec
from .protocol import RoundConfig, SamplerConfig, build_nodes, run_rounds

log = logging.getLogger("federico")


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    metric: str
    n_test: list
    per_client: list = field(default_factory=list)
    # (round, K x K weights) for methods that keep mixture weights.
    weights: list = field(default_factory=list)
    # (round, per-client training loss of the client's own model).
    train_loss: list = field(default_factory=list)
    # (round, per-client test metric) every eval_every rounds and at T.
    metric_trace: list = field(default_factory=list)
    # dicts with round, bytes_sent, all_to_all_bytes, messages.
    comm: list = field(default_factory=list)
    wall_clock_s: float = 0.0
    complete: bool = False

    @property
    def weighted(self) -> float:
        return weighted_average(self.per_client, self.n_test)


def weighted_average(values, sizes) -> float:
    """Average of ``values`` weighted by the clients' test-set sizes."""
    total = sum(sizes)
    return math.fsum(v * n for v, n in zip(values, sizes)) / total


def build_clients(cfg: ExperimentConfig):
    d = cfg.data
    if cfg.recipe == "sine":
        return gen_sine_clients(cfg.K, d.n_per_client, d.noise_std, seed=d.seed)
    if cfg.recipe == "clusters":
        return gen_cluster_classification(cfg.G, cfg.K, d.dims, d.classes_per_dist, d.n_per_client,
                                          d.sep, seed=d.seed, noise_std=d.noise_std,
                                          shared_layout=d.shared_layout)
    pool = load_csv_pool(d.csv_path)
    if d.partition == "labels":
        return partition_by_labels(pool, cfg.G, cfg.K, seed=d.seed)
    return partition_dirichlet(pool, cfg.G, cfg.K, d.alpha, seed=d.seed)


def build_spec(cfg: ExperimentConfig, clients) -> ModelSpec:
    x0 = clients[0].train.x
    if cfg.recipe == "sine":
        out = 1
    else:
        out = int(max(max(c.train.y.max(), c.test.y.max()) for c in clients)) + 1
    return ModelSpec(cfg.model.kind, x0.shape[1], out, hidden_dim=cfg.model.hidden_dim,
                     activation=cfg.model.activation, init_scale=cfg.model.init_scale)


def _eval_rounds(cfg):
    rounds = set(range(cfg.eval_every, cfg.T + 1, cfg.eval_every))
    rounds.add(cfg.T)
    return rounds


def run_experiment(cfg: ExperimentConfig, workers: int = 1,
                   result: Optional[ExperimentResult] = None) -> ExperimentResult:
    """Run ``cfg.method`` and fill ``result`` (created if absent) as rounds complete.

    Passing ``result`` lets the caller keep the partial traces if a round fails.
    """
    cfg = resolve(cfg)
    t0 = time.perf_counter()
    clients = build_clients(cfg)
    spec = build_spec(cfg, clients)
    tests = [c.test.samples for c in clients]
    trains = [c.train.samples for c in clients]
    if result is None:
        result = ExperimentResult(cfg, cfg.metric, [len(t.x) for t in tests])
    else:
        result.config, result.metric, result.n_test = cfg, cfg.metric, [len(t.x) for t in tests]
    nodes = build_nodes(trains, spec, cfg.seed, tracker_mode=cfg.tracker.mode,
                        beta=cfg.tracker.beta, optimizer=cfg.optimizer.kind,
                        holdout_frac=cfg.tracker.holdout_frac)
    evals = _eval_rounds(cfg)
    K = cfg.K
    log.info("running %s on %s: K=%d T=%d seed=%d data.seed=%d", cfg.method, cfg.recipe, K, cfg.T,
             cfg.seed, cfg.data.seed)

    def score(weights, models):
        return [evaluate(weights[i], models, tests[i], cfg.metric) for i in range(K)]

    def own_models(params):
        # Client i's predictor is model i alone.
        models = [(spec, p) for p in params]
        return score(np.eye(K), models)

    def record_baseline(t, params):
        result.comm.append({"round": t, "bytes_sent": result_bytes[t - 1],
                            "all_to_all_bytes": 0, "messages": 0})
        if t in evals:
            result.metric_trace.append((t, own_models(params)))

    if cfg.T == 0:
        # Nothing runs: report the initial models under uniform weights.
        if cfg.method in ("federico", "reference_em"):
            W = np.full((K, K), 1.0 / K)
            result.weights.append((0, W))
            result.metric_trace.append((0, score(W, [(spec, n.params) for n in nodes])))
        else:
            start = [n.params for n in nodes]
            if cfg.method != "local_only":
                start = [nodes[0].params] * K
            result.metric_trace.append((0, own_models(start)))
    elif cfg.method == "federico":
        rc = RoundConfig(SamplerConfig(cfg.sampler.M, cfg.sampler.epsilon), lr=cfg.optimizer.lr,
                         local_steps=cfg.local_steps, loss_kind=cfg.loss_kind,
                         loss_reduction=cfg.loss_reduction, batch_size=cfg.batch_size)

        def on_round(trace, nodes):
            result.weights.append((trace.round, trace.weights))
            result.train_loss.append((trace.round, trace.train_loss))
            result.comm.append({"round": trace.round, "bytes_sent": trace.bytes_sent,
                                "all_to_all_bytes": trace.all_to_all_bytes,
                                "messages": trace.messages})
            if trace.round in evals:
                models = [(spec, n.params) for n in nodes]
                result.metric_trace.append((trace.round, score(trace.weights, models)))

        run_rounds(nodes, rc, cfg.T, workers=workers, on_round=on_round)
    elif cfg.method == "reference_em":
        datasets = [(t.x, t.y) for t in trains]
        phi0 = [n.params for n in nodes]
        d_bytes = phi0[0].nbytes
        _, trace = run_reference_em(phi0, spec, datasets, cfg.loss_kind, cfg.T, lr=cfg.optimizer.lr,
                                    m_step=cfg.reference_em.m_step, reduction=cfg.loss_reduction)
        prev = phi0
        for t, (W, phi) in enumerate(zip(trace.weights, trace.phi), start=1):
            L = loss_matrix(spec, prev, datasets, cfg.loss_kind, cfg.loss_reduction)
            result.weights.append((t, W))
            result.train_loss.append((t, np.diag(L).copy()))
            result.comm.append({"round": t, "bytes_sent": 2 * K * (K - 1) * d_bytes,
                                "all_to_all_bytes": 2 * K * (K - 1) * d_bytes,
                                "messages": 2 * K * (K - 1)})
            if t in evals:
                result.metric_trace.append((t, score(W, [(spec, p) for p in phi])))
            prev = phi
    else:
        kw = dict(loss_kind=cfg.loss_kind, reduction=cfg.loss_reduction, batch_size=cfg.batch_size)
        d_bytes = nodes[0].params.nbytes
        result_bytes = [0 if cfg.method == "local_only" else 2 * K * d_bytes] * cfg.T
        if cfg.method == "local_only":
            out = baselines.run_local(nodes, cfg.T, cfg.optimizer.lr, on_round=record_baseline, **kw)
        elif cfg.method == "fedavg":
            out = baselines.run_fedavg(nodes, cfg.T, cfg.optimizer.lr, cfg.local_steps,
                                       on_round=record_baseline, **kw)
        else:
            out = baselines.run_fedavg_plus(nodes, cfg.T, cfg.optimizer.lr, cfg.local_steps,
                                            cfg.fedavg_plus.fine_tune_epochs,
                                            cfg.fedavg_plus.fine_tune_lr,
                                            on_round=record_baseline, **kw)
            # The last trace point reflects the fine-tuned models.
            result.metric_trace[-1] = (cfg.T, own_models(out.params))
        result.train_loss = [(t, loss) for t, loss in enumerate(out.train_loss, start=1)]

    result.per_client = list(result.metric_trace[-1][1])
    result.wall_clock_s = time.perf_counter() - t0
    result.complete = True
    log.info("%s finished: weighted %s %.4f in %.2fs", cfg.method, cfg.metric, result.weighted,
             result.wall_clock_s)
    return result


COMPARE_METHODS = ("federico", "local_only", "fedavg", "fedavg_plus")


@dataclass
class CompareRow:
    split: int
    seed: int
    method: str
    weighted: float
    per_client: list


def compare_methods(cfg: ExperimentConfig, splits, seeds, methods=COMPARE_METHODS,
                    workers: int = 1, on_result=None) -> list[CompareRow]:
    """Run every method on every (data split, seed) pair.

    A split is a ``data.seed`` value; all methods in one (split, seed) cell see
    the same clients and initial models. ``on_result(row, result)`` fires per run.
    """
    rows = []
    for split in splits:
        for seed in seeds:
            for method in methods:
                run_cfg = resolve(cfg)
                run_cfg.method, run_cfg.seed, run_cfg.data.seed = method, seed, split
                res = run_experiment(run_cfg, workers=workers)
                row = CompareRow(split, seed, method, res.weighted, list(res.per_client))
                rows.append(row)
                if on_result is not None:
                    on_result(row, res)
    return rows


def split_means(rows) -> dict:
    """``{method: {split: mean weighted metric over seeds}}``."""
    acc = {}
    for r in rows:
        acc.setdefault(r.method, {}).setdefault(r.split, []).append(r.weighted)
    return {m: {s: math.fsum(v) / len(v) for s, v in by_split.items()} for m, by_split in acc.items()}
