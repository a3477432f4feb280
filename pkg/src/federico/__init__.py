"""Desk-scale simulator of decentralized personalized federated learning.

Clients learn mixture weights over each other's models from observed losses,
exchange models and weighted gradients with a few sampled neighbors per
round, and are compared against local-only training and FedAvg.
"""
from .config import ExperimentConfig, config_from_dict, parse_config
from .errors import ConfigError, FedericoError, NumericFailure, ProtocolIntegrityError
from .experiment import ExperimentResult, compare_methods, run_experiment
from .models import ModelSpec
from .traces import emit_traces

__all__ = [
    "ConfigError", "ExperimentConfig", "ExperimentResult", "FedericoError", "ModelSpec",
    "NumericFailure", "ProtocolIntegrityError", "compare_methods", "config_from_dict", "emit_traces",
    "parse_config",
    "run_experiment",
]
