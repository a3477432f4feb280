"""Small differentiable predictors with hand-derived gradients.

Parameters are flat float64 vectors. The layout per kind is

* ``linear_regression`` / ``logistic_regression``: ``W`` (output_dim x
  input_dim, row major) followed by ``b`` (output_dim).
* ``mlp_1hidden``: ``W1`` (hidden x input), ``b1``, ``W2`` (output x hidden),
  ``b2``.

Batches are ``(X, Y)`` pairs with ``X`` of shape ``(n, input_dim)``.
Regression targets are ``(n, output_dim)`` or ``(n,)`` when ``output_dim == 1``;
classification targets are integer labels of shape ``(n,)``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import ConfigError, NumericFailure

MODEL_KINDS = ("linear_regression", "logistic_regression", "mlp_1hidden")
ACTIVATIONS = ("tanh", "relu")
LOSS_KINDS = ("mse", "cross_entropy")
REDUCTIONS = ("sum", "mean")

PROB_FLOOR = 1e-12


@dataclass(frozen=True)
class ModelSpec:
    kind: str
    input_dim: int
    output_dim: int = 1
    hidden_dim: Optional[int] = None
    activation: str = "tanh"
    # None picks the natural head: softmax for logistic, identity otherwise.
    head: Optional[str] = None
    init_scale: float = 1.0

    def __post_init__(self):
        if self.kind not in MODEL_KINDS:
            raise ConfigError(f"unknown model kind {self.kind!r}", key="model.kind")
        if self.input_dim < 1 or self.output_dim < 1:
            raise ConfigError("dimensions must be positive", key="model")
        if self.kind == "mlp_1hidden":
            if self.hidden_dim is None or self.hidden_dim < 1:
                raise ConfigError("mlp_1hidden needs a positive hidden_dim", key="model.hidden_dim")
            if self.activation not in ACTIVATIONS:
                raise ConfigError(f"unknown activation {self.activation!r}", key="model.activation")
        if self.head not in (None, "identity", "softmax"):
            raise ConfigError(f"unknown head {self.head!r}", key="model.head")
        if not self.init_scale >= 0:
            raise ConfigError("must be non-negative", key="model.init_scale")
        if self.kind == "logistic_regression" and self.head == "identity":
            raise ConfigError("logistic_regression always uses a softmax head", key="model.head")

    @property
    def softmax_head(self) -> bool:
        if self.head is not None:
            return self.head == "softmax"
        return self.kind == "logistic_regression"

    @property
    def n_params(self) -> int:
        if self.kind == "mlp_1hidden":
            h = self.hidden_dim
            return h * self.input_dim + h + self.output_dim * h + self.output_dim
        return self.output_dim * self.input_dim + self.output_dim


def _unpack(spec: ModelSpec, params: np.ndarray):
    params = np.asarray(params, dtype=np.float64)
    if params.ndim != 1 or params.shape[0] != spec.n_params:
        raise ConfigError(
            f"parameter vector has length {params.size}, model needs {spec.n_params}"
        )
    d, o = spec.input_dim, spec.output_dim
    if spec.kind != "mlp_1hidden":
        return params[: o * d].reshape(o, d), params[o * d:]
    h = spec.hidden_dim
    i = 0
    W1 = params[i:i + h * d].reshape(h, d)
    i += h * d
    b1 = params[i:i + h]
    i += h
    W2 = params[i:i + o * h].reshape(o, h)
    i += o * h
    b2 = params[i:i + o]
    return W1, b1, W2, b2


def init_params(spec: ModelSpec, rng: np.random.Generator) -> np.ndarray:
    """Uniform in +-init_scale/sqrt(fan_in) per layer, weights and biases alike.

    ``init_scale=0`` gives all-zero parameters (fine for the convex kinds, but
    it leaves an MLP's hidden units symmetric).
    """
    d, o = spec.input_dim, spec.output_dim
    if spec.kind != "mlp_1hidden":
        bound = spec.init_scale / np.sqrt(d)
        return rng.uniform(-bound, bound, size=spec.n_params)
    h = spec.hidden_dim
    b_in = spec.init_scale / np.sqrt(d)
    b_hid = spec.init_scale / np.sqrt(h)
    return np.concatenate([
        rng.uniform(-b_in, b_in, size=h * d + h),
        rng.uniform(-b_hid, b_hid, size=o * h + o),
    ])


def _softmax_rows(z):
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _as_matrix(spec, X):
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X.reshape(1, -1) if spec.input_dim > 1 or X.size == 1 else X.reshape(-1, 1)
    if X.ndim != 2 or X.shape[1] != spec.input_dim:
        raise ConfigError(f"inputs have shape {X.shape}, model expects width {spec.input_dim}")
    return X


def _forward(spec, params, X):
    """Return (outputs, cache) for a batch."""
    parts = _unpack(spec, params)
    if spec.kind != "mlp_1hidden":
        W, b = parts
        z = X @ W.T + b
        hidden = None
    else:
        W1, b1, W2, b2 = parts
        a = X @ W1.T + b1
        hidden = np.tanh(a) if spec.activation == "tanh" else np.maximum(a, 0.0)
        z = hidden @ W2.T + b2
    out = _softmax_rows(z) if spec.softmax_head else z
    return out, (parts, hidden)


def predict_batch(spec: ModelSpec, params, X) -> np.ndarray:
    """Model outputs for every row of ``X``, shape ``(n, output_dim)``."""
    out, _ = _forward(spec, params, _as_matrix(spec, X))
    return out


def predict(spec: ModelSpec, params, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    if x.shape[0] != spec.input_dim:
        raise ConfigError(f"input has length {x.shape[0]}, model expects {spec.input_dim}")
    return predict_batch(spec, params, x.reshape(1, -1))[0]


def _targets(spec, loss_kind, Y, n):
    Y = np.asarray(Y)
    if loss_kind == "cross_entropy":
        Y = Y.reshape(-1)
        if Y.shape[0] != n:
            raise ConfigError("label count does not match batch size")
        labels = Y.astype(np.int64)
        if np.any(labels != Y) or np.any(labels < 0) or np.any(labels >= spec.output_dim):
            raise ConfigError(f"labels must be integers in [0, {spec.output_dim})")
        return labels
    Y = np.asarray(Y, dtype=np.float64).reshape(n, -1)
    if Y.shape[1] != spec.output_dim:
        raise ConfigError(f"targets have width {Y.shape[1]}, model outputs {spec.output_dim}")
    return Y


def _check_loss(spec, loss_kind):
    if loss_kind not in LOSS_KINDS:
        raise ConfigError(f"unknown loss {loss_kind!r}", key="loss")
    if loss_kind == "cross_entropy" and not spec.softmax_head:
        raise ConfigError("cross_entropy needs a softmax head", key="loss")


def loss(loss_kind: str, y_hat, y) -> float:
    """Loss of a single prediction.

    mse is half the squared error; cross_entropy is ``-log y_hat[y]`` with the
    probability clamped at ``PROB_FLOOR``.
    """
    y_hat = np.atleast_1d(np.asarray(y_hat, dtype=np.float64))
    if loss_kind == "mse":
        diff = y_hat - np.atleast_1d(np.asarray(y, dtype=np.float64))
        if diff.shape != y_hat.shape:
            raise ConfigError("prediction and target shapes differ")
        return float(0.5 * np.dot(diff, diff))
    if loss_kind == "cross_entropy":
        label = int(y)
        if not 0 <= label < y_hat.shape[0]:
            raise ConfigError(f"label {label} outside [0, {y_hat.shape[0]})")
        return float(-np.log(max(y_hat[label], PROB_FLOOR)))
    raise ConfigError(f"unknown loss {loss_kind!r}", key="loss")


def _losses_from_outputs(loss_kind, out, Y):
    if loss_kind == "mse":
        diff = out - Y
        return 0.5 * np.einsum("ij,ij->i", diff, diff)
    p = out[np.arange(out.shape[0]), Y]
    return -np.log(np.maximum(p, PROB_FLOOR))


def sample_losses(spec: ModelSpec, params, loss_kind: str, X, Y) -> np.ndarray:
    """Per-sample losses over a batch."""
    _check_loss(spec, loss_kind)
    X = _as_matrix(spec, X)
    Y = _targets(spec, loss_kind, Y, X.shape[0])
    out, _ = _forward(spec, params, X)
    return _losses_from_outputs(loss_kind, out, Y)


def _reduce(values, reduction):
    if reduction == "sum":
        return values.sum(axis=0)
    if reduction == "mean":
        return values.sum(axis=0) / values.shape[0]
    raise ConfigError(f"unknown reduction {reduction!r}", key="loss_reduction")


def batch_loss(spec: ModelSpec, params, loss_kind: str, X, Y, reduction: str = "sum") -> float:
    return float(_reduce(sample_losses(spec, params, loss_kind, X, Y), reduction))


def grad(spec: ModelSpec, params, loss_kind: str, X, Y, reduction: str = "sum") -> np.ndarray:
    """Gradient of the summed (or averaged) batch loss w.r.t. the parameters."""
    _check_loss(spec, loss_kind)
    X = _as_matrix(spec, X)
    n = X.shape[0]
    if n == 0:
        raise ConfigError("gradient of an empty batch")
    Y = _targets(spec, loss_kind, Y, n)
    out, (parts, hidden) = _forward(spec, params, X)

    if loss_kind == "cross_entropy":
        dz = out.copy()
        dz[np.arange(n), Y] -= 1.0
        # Below the floor the clamped loss is constant, so those samples contribute nothing.
        dz[out[np.arange(n), Y] < PROB_FLOOR] = 0.0
    elif spec.softmax_head:
        dout = out - Y
        dz = out * (dout - np.einsum("ij,ij->i", out, dout)[:, None])
    else:
        dz = out - Y
    if reduction == "mean":
        dz = dz / n
    elif reduction != "sum":
        raise ConfigError(f"unknown reduction {reduction!r}", key="loss_reduction")

    if spec.kind != "mlp_1hidden":
        return np.concatenate([(dz.T @ X).ravel(), dz.sum(axis=0)])

    W1, b1, W2, b2 = parts
    dW2 = dz.T @ hidden
    db2 = dz.sum(axis=0)
    dh = dz @ W2
    if spec.activation == "tanh":
        da = dh * (1.0 - hidden * hidden)
    else:
        da = dh * (hidden > 0.0)
    return np.concatenate([(da.T @ X).ravel(), da.sum(axis=0), dW2.ravel(), db2])


class SGD:
    kind = "sgd"

    def step(self, params, update, lr):
        return params - lr * update


class Adam:
    kind = "adam"

    def __init__(self, beta1=0.9, beta2=0.999, eps=1e-8):
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = None
        self.v = None
        self.t = 0

    def step(self, params, update, lr):
        if self.m is None:
            self.m = np.zeros_like(update)
            self.v = np.zeros_like(update)
        self.t += 1
        self.m = self.beta1 * self.m + (1.0 - self.beta1) * update
        self.v = self.beta2 * self.v + (1.0 - self.beta2) * update * update
        m_hat = self.m / (1.0 - self.beta1 ** self.t)
        v_hat = self.v / (1.0 - self.beta2 ** self.t)
        return params - lr * m_hat / (np.sqrt(v_hat) + self.eps)


def make_optimizer(kind: str):
    if kind == "sgd":
        return SGD()
    if kind == "adam":
        return Adam()
    raise ConfigError(f"unknown optimizer {kind!r}", key="optimizer.kind")


def optimizer_step(opt, params, update, lr, round=None, client=None) -> np.ndarray:
    """Apply one update, refusing non-finite inputs or results."""
    if not lr > 0:
        raise ConfigError("learning rate must be positive", key="optimizer.lr")
    update = np.asarray(update, dtype=np.float64)
    if not np.all(np.isfinite(update)):
        raise NumericFailure("non-finite update", round=round, client=client)
    new = opt.step(np.asarray(params, dtype=np.float64), update, lr)
    if not np.all(np.isfinite(new)):
        raise NumericFailure("parameters became non-finite", round=round, client=client)
    return new
