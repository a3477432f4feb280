"""JSON experiment configuration.

A config file is a JSON object; every key is optional. Missing keys take the
defaults below, and keys left as ``null`` are filled from the recipe (see
``RECIPE_DEFAULTS``). Unknown keys are rejected. ``to_dict`` emits the fully
resolved config, which parses back to an identical object.

Schema (defaults in brackets)::

    recipe          sine | clusters | csv_pool                  [sine]
    method          federico | local_only | fedavg | fedavg_plus | reference_em
                                                                [federico]
    K, G, T         clients, distributions, rounds              [8, 4, recipe]
    seed            model init and sampler seed                 [0]
    eval_every      rounds between test evaluations             [10]
    output_dir      where `run` writes when --out is absent     [runs]
    local_steps     gradient steps per round                    [1]
    batch_size      mini-batch size, null for full batch        [null]
    loss_reduction  sum | mean over a client's samples          [recipe]
    sampler         {M [3], epsilon [0.3]}
    tracker         {mode: ema | accumulative [ema], beta [0.6], holdout_frac [0.0]}
    optimizer       {kind: adam | sgd [adam], lr [0.01]}
    model           {kind, hidden_dim, activation [tanh], init_scale}
    fedavg_plus     {fine_tune_epochs [1], fine_tune_lr [null = optimizer.lr]}
    reference_em    {m_step: gradient | exact [gradient]}
    data            {seed [0], n_per_client, noise_std, dims, classes_per_dist,
                     sep, shared_layout, csv_path, partition, alpha}
"""
from __future__ import annotations

import copy
import json
from dataclasses import asdict, dataclass, field, fields, is_dataclass
from typing import Optional

from .errors import ConfigError
from .mixture import TRACKER_MODES
from .models import ACTIVATIONS, MODEL_KINDS, REDUCTIONS

RECIPES = ("sine", "clusters", "csv_pool")
METHODS = ("federico", "local_only", "fedavg", "fedavg_plus", "reference_em")
OPTIMIZERS = ("adam", "sgd")
PARTITIONS = ("labels", "dirichlet")

# Values used for null fields, per recipe. The clusters settings put each
# distribution's classes at the same positions under different labels, start
# from zero weights and average the loss over samples; that combination lets
# the weights settle on same-distribution peers.
RECIPE_DEFAULTS = {
    "sine": {
        "T": 500, "loss_reduction": "sum",
        "model": {"kind": "linear_regression", "init_scale": 1.0},
        "data": {"n_per_client": 50, "noise_std": 0.1},
    },
    "clusters": {
        "T": 300, "loss_reduction": "mean",
        "model": {"kind": "logistic_regression", "init_scale": 0.0},
        "data": {"n_per_client": 40, "noise_std": 1.0, "dims": 2, "classes_per_dist": 4,
                 "sep": 1.5, "shared_layout": True},
    },
    "csv_pool": {
        "T": 300, "loss_reduction": "mean",
        "model": {"kind": "logistic_regression", "init_scale": 0.0},
        "data": {"partition": "labels", "alpha": 0.4},
    },
}


@dataclass
class SamplerSection:
    M: int = 3
    epsilon: float = 0.3


@dataclass
class TrackerSection:
    mode: str = "ema"
    beta: float = 0.6
    holdout_frac: float = 0.0


@dataclass
class OptimizerSection:
    kind: str = "adam"
    lr: float = 0.01


@dataclass
class ModelSection:
    kind: Optional[str] = None
    hidden_dim: Optional[int] = None
    activation: str = "tanh"
    init_scale: Optional[float] = None


@dataclass
class FedAvgPlusSection:
    fine_tune_epochs: int = 1
    fine_tune_lr: Optional[float] = None


@dataclass
class ReferenceEMSection:
    m_step: str = "gradient"


@dataclass
class DataSection:
    seed: int = 0
    n_per_client: Optional[int] = None
    noise_std: Optional[float] = None
    dims: Optional[int] = None
    classes_per_dist: Optional[int] = None
    sep: Optional[float] = None
    shared_layout: Optional[bool] = None
    csv_path: Optional[str] = None
    partition: Optional[str] = None
    alpha: Optional[float] = None


@dataclass
class ExperimentConfig:
    recipe: str = "sine"
    method: str = "federico"
    K: int = 8
    G: int = 4
    T: Optional[int] = None
    seed: int = 0
    eval_every: int = 10
    output_dir: str = "runs"
    local_steps: int = 1
    batch_size: Optional[int] = None
    loss_reduction: Optional[str] = None
    sampler: SamplerSection = field(default_factory=SamplerSection)
    tracker: TrackerSection = field(default_factory=TrackerSection)
    optimizer: OptimizerSection = field(default_factory=OptimizerSection)
    model: ModelSection = field(default_factory=ModelSection)
    fedavg_plus: FedAvgPlusSection = field(default_factory=FedAvgPlusSection)
    reference_em: ReferenceEMSection = field(default_factory=ReferenceEMSection)
    data: DataSection = field(default_factory=DataSection)

    @property
    def loss_kind(self) -> str:
        return "mse" if self.recipe == "sine" else "cross_entropy"

    @property
    def metric(self) -> str:
        return "mse" if self.recipe == "sine" else "accuracy"

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def _build(cls, raw, prefix):
    if not isinstance(raw, dict):
        raise ConfigError("expected a JSON object", key=prefix or "config")
    known = {f.name: f for f in fields(cls)}
    kwargs = {}
    for name, value in raw.items():
        key = f"{prefix}.{name}" if prefix else name
        if name not in known:
            raise ConfigError("unknown key", key=key)
        default = known[name].default_factory() if callable(known[name].default_factory) else None
        if is_dataclass(default):
            kwargs[name] = _build(type(default), value, key)
        else:
            kwargs[name] = value
    return cls(**kwargs)


def _fill(section, defaults):
    for name, value in defaults.items():
        if getattr(section, name) is None:
            setattr(section, name, value)


def _check_int(value, key, low, high=None):
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(f"must be an integer, got {value!r}", key=key)
    if value < low or (high is not None and value > high):
        bound = f"[{low}, {high}]" if high is not None else f">= {low}"
        raise ConfigError(f"must be {bound}, got {value}", key=key)


def _check_real(value, key, low=None, high=None, low_open=False):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"must be a number, got {value!r}", key=key)
    if low is not None and (value < low or (low_open and value == low)):
        raise ConfigError(f"must be {'>' if low_open else '>='} {low}, got {value}", key=key)
    if high is not None and value > high:
        raise ConfigError(f"must be <= {high}, got {value}", key=key)


def _check_choice(value, key, choices):
    if value not in choices:
        raise ConfigError(f"must be one of {', '.join(choices)}; got {value!r}", key=key)


def resolve(cfg: ExperimentConfig) -> ExperimentConfig:
    """Fill recipe defaults into null fields and validate every range."""
    cfg = copy.deepcopy(cfg)
    _check_choice(cfg.recipe, "recipe", RECIPES)
    _check_choice(cfg.method, "method", METHODS)
    rd = RECIPE_DEFAULTS[cfg.recipe]
    if cfg.T is None:
        cfg.T = rd["T"]
    if cfg.loss_reduction is None:
        cfg.loss_reduction = rd["loss_reduction"]
    _fill(cfg.model, rd["model"])
    _fill(cfg.data, rd["data"])

    _check_int(cfg.K, "K", 2)
    _check_int(cfg.G, "G", 1)
    _check_int(cfg.T, "T", 0)
    _check_int(cfg.seed, "seed", 0)
    _check_int(cfg.eval_every, "eval_every", 1)
    _check_int(cfg.local_steps, "local_steps", 1)
    if cfg.batch_size is not None:
        _check_int(cfg.batch_size, "batch_size", 1)
    _check_choice(cfg.loss_reduction, "loss_reduction", REDUCTIONS)
    if not isinstance(cfg.output_dir, str) or not cfg.output_dir:
        raise ConfigError("must be a non-empty path", key="output_dir")

    _check_real(cfg.sampler.epsilon, "sampler.epsilon", 0.0, 1.0)
    _check_int(cfg.sampler.M, "sampler.M", 1, cfg.K - 1)
    _check_choice(cfg.tracker.mode, "tracker.mode", TRACKER_MODES)
    _check_real(cfg.tracker.beta, "tracker.beta", 0.0)
    if cfg.tracker.beta >= 1.0:
        raise ConfigError(f"must be < 1, got {cfg.tracker.beta}", key="tracker.beta")
    _check_real(cfg.tracker.holdout_frac, "tracker.holdout_frac", 0.0)
    if cfg.tracker.holdout_frac >= 1.0:
        raise ConfigError(f"must be < 1, got {cfg.tracker.holdout_frac}", key="tracker.holdout_frac")
    _check_choice(cfg.optimizer.kind, "optimizer.kind", OPTIMIZERS)
    _check_real(cfg.optimizer.lr, "optimizer.lr", 0.0, low_open=True)

    _check_choice(cfg.model.kind, "model.kind", MODEL_KINDS)
    _check_choice(cfg.model.activation, "model.activation", ACTIVATIONS)
    _check_real(cfg.model.init_scale, "model.init_scale", 0.0)
    if cfg.model.kind == "mlp_1hidden":
        if cfg.model.hidden_dim is None:
            raise ConfigError("required for mlp_1hidden", key="model.hidden_dim")
        _check_int(cfg.model.hidden_dim, "model.hidden_dim", 1)
    if cfg.recipe == "sine" and cfg.model.kind == "logistic_regression":
        raise ConfigError("the sine recipe is a regression task", key="model.kind")
    if cfg.recipe != "sine" and cfg.model.kind == "linear_regression":
        raise ConfigError(f"the {cfg.recipe} recipe is a classification task", key="model.kind")

    _check_int(cfg.fedavg_plus.fine_tune_epochs, "fedavg_plus.fine_tune_epochs", 1)
    if cfg.fedavg_plus.fine_tune_lr is not None:
        _check_real(cfg.fedavg_plus.fine_tune_lr, "fedavg_plus.fine_tune_lr", 0.0)
    _check_choice(cfg.reference_em.m_step, "reference_em.m_step", ("gradient", "exact"))
    if cfg.method == "reference_em" and cfg.reference_em.m_step == "exact" \
            and cfg.model.kind != "linear_regression":
        raise ConfigError("the exact M-step needs linear_regression", key="reference_em.m_step")

    d = cfg.data
    _check_int(d.seed, "data.seed", 0)
    if cfg.recipe in ("sine", "clusters"):
        _check_int(d.n_per_client, "data.n_per_client", 4 if cfg.recipe == "sine" else 2)
        _check_real(d.noise_std, "data.noise_std", 0.0)
    if cfg.recipe == "clusters":
        if cfg.G < 2 or cfg.G > cfg.K:
            raise ConfigError(f"must lie in [2, K={cfg.K}] for clusters", key="G")
        _check_int(d.dims, "data.dims", 1)
        _check_int(d.classes_per_dist, "data.classes_per_dist", 1)
        _check_real(d.sep, "data.sep", 0.0)
        if not isinstance(d.shared_layout, bool):
            raise ConfigError("must be true or false", key="data.shared_layout")
    if cfg.recipe == "csv_pool":
        if not d.csv_path:
            raise ConfigError("required for the csv_pool recipe", key="data.csv_path")
        _check_choice(d.partition, "data.partition", PARTITIONS)
        _check_real(d.alpha, "data.alpha", 0.0, low_open=True)
    return cfg


def config_from_dict(raw: dict) -> ExperimentConfig:
    return resolve(_build(ExperimentConfig, raw, ""))


def parse_config(path) -> ExperimentConfig:
    """Read, default-fill and validate a JSON config; an empty file means all defaults."""
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    if not text.strip():
        return config_from_dict({})
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path} is not valid JSON: {exc}", key="config") from None
    return config_from_dict(raw)


def set_path(raw: dict, dotted: str, value) -> dict:
    """Return a copy of ``raw`` with ``a.b.c`` set to ``value``."""
    out = copy.deepcopy(raw)
    parts = dotted.split(".")
    node = out
    for p in parts[:-1]:
        node = node.setdefault(p, {})
        if not isinstance(node, dict):
            raise ConfigError("is not a section", key=dotted)
    node[parts[-1]] = value
    return out
