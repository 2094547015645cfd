"""Desk-scale differentiable objectives with exact gradients.

Parameters are always flat float64 vectors. The three variants are an
isotropic quadratic (per-client centre), multinomial logistic regression and
a one-hidden-layer ReLU network, both with mean softmax cross-entropy.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, InputError, UnsupportedOperationError

QUADRATIC = "quadratic"
SOFTMAX = "softmax_regression"
MLP1 = "mlp1"


@dataclass(frozen=True)
class Batch:
    features: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "features", np.asarray(self.features, dtype=np.float64))
        object.__setattr__(self, "labels", np.asarray(self.labels, dtype=np.int64))
        if self.features.ndim != 2:
            raise InputError("features must be a 2-d matrix")
        if len(self.labels) != len(self.features):
            raise InputError("one label per feature row is required")

    def __len__(self) -> int:
        return len(self.labels)

    def take(self, idx) -> "Batch":
        return Batch(self.features[idx], self.labels[idx])


@dataclass(frozen=True)
class ModelSpec:
    """Model variant plus its shape parameters.

    Use the ``quadratic``, ``softmax`` and ``mlp`` constructors rather than
    filling the fields by hand.
    """

    variant: str
    center: np.ndarray | None = field(default=None, compare=False)
    n_features: int = 0
    n_classes: int = 0
    n_hidden: int = 0

    @classmethod
    def quadratic(cls, center) -> "ModelSpec":
        c = np.asarray(center, dtype=np.float64).ravel().copy()
        if c.size == 0:
            raise ConfigurationError("quadratic centre must be non-empty", "model.center")
        c.setflags(write=False)
        return cls(QUADRATIC, center=c)

    @classmethod
    def softmax(cls, n_features: int, n_classes: int) -> "ModelSpec":
        if n_features < 1 or n_classes < 2:
            raise ConfigurationError("need n_features >= 1 and n_classes >= 2", "model")
        return cls(SOFTMAX, n_features=n_features, n_classes=n_classes)

    @classmethod
    def mlp(cls, n_features: int, n_hidden: int, n_classes: int) -> "ModelSpec":
        if n_features < 1 or n_hidden < 1 or n_classes < 2:
            raise ConfigurationError("need positive layer sizes and n_classes >= 2", "model")
        return cls(MLP1, n_features=n_features, n_classes=n_classes, n_hidden=n_hidden)

    @property
    def dim(self) -> int:
        if self.variant == QUADRATIC:
            return int(self.center.size)
        if self.variant == SOFTMAX:
            return self.n_features * self.n_classes + self.n_classes
        if self.variant == MLP1:
            h = self.n_hidden
            return self.n_features * h + h + h * self.n_classes + self.n_classes
        raise ConfigurationError(f"unknown model variant {self.variant!r}", "model.kind")

    @property
    def is_classifier(self) -> bool:
        return self.variant in (SOFTMAX, MLP1)


def _check(model: ModelSpec, params: np.ndarray, batch: Batch | None) -> None:
    if params.ndim != 1 or params.size != model.dim:
        raise ConfigurationError(
            f"parameter vector has size {params.size}, model expects {model.dim}", "params"
        )
    if not model.is_classifier:
        return
    if batch is None or len(batch) == 0:
        raise InputError("empty batch for a data-driven model")
    if batch.features.shape[1] != model.n_features:
        raise ConfigurationError(
            f"batch has {batch.features.shape[1]} features, model expects {model.n_features}",
            "batch",
        )
    if batch.labels.min() < 0 or batch.labels.max() >= model.n_classes:
        raise InputError("labels outside [0, n_classes)")


def _unpack_softmax(model: ModelSpec, params: np.ndarray):
    k, f = model.n_classes, model.n_features
    return params[: k * f].reshape(k, f), params[k * f :]


def _unpack_mlp(model: ModelSpec, params: np.ndarray):
    f, h, k = model.n_features, model.n_hidden, model.n_classes
    o = 0
    w1 = params[o : o + h * f].reshape(h, f)
    o += h * f
    b1 = params[o : o + h]
    o += h
    w2 = params[o : o + k * h].reshape(k, h)
    o += k * h
    b2 = params[o : o + k]
    return w1, b1, w2, b2


def _xent(scores: np.ndarray, labels: np.ndarray):
    """Mean cross-entropy and its gradient with respect to the scores."""
    m = len(labels)
    z = scores - scores.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(z).sum(axis=1))
    loss = float(np.mean(logsum - z[np.arange(m), labels]))
    probs = np.exp(z - logsum[:, None])
    probs[np.arange(m), labels] -= 1.0
    return loss, probs / m


def eval_loss_grad(model: ModelSpec, params: np.ndarray, batch: Batch | None = None):
    """Mean loss over ``batch`` and its exact gradient with respect to ``params``."""
    params = np.asarray(params, dtype=np.float64)
    _check(model, params, batch)
    if model.variant == QUADRATIC:
        diff = params - model.center
        return 0.5 * float(diff @ diff), diff.copy()

    x, y = batch.features, batch.labels
    if model.variant == SOFTMAX:
        w, b = _unpack_softmax(model, params)
        loss, dscores = _xent(x @ w.T + b, y)
        return loss, np.concatenate([(dscores.T @ x).ravel(), dscores.sum(axis=0)])

    w1, b1, w2, b2 = _unpack_mlp(model, params)
    pre = x @ w1.T + b1
    hidden = np.maximum(pre, 0.0)
    loss, dscores = _xent(hidden @ w2.T + b2, y)
    dhidden = (dscores @ w2) * (pre > 0)
    grad = np.concatenate(
        [
            (dhidden.T @ x).ravel(),
            dhidden.sum(axis=0),
            (dscores.T @ hidden).ravel(),
            dscores.sum(axis=0),
        ]
    )
    return loss, grad


def loss_only(model: ModelSpec, params: np.ndarray, batch: Batch | None = None) -> float:
    return eval_loss_grad(model, params, batch)[0]


def finite_diff_grad(model: ModelSpec, params: np.ndarray, batch: Batch | None = None,
                     step: float = 1e-6) -> np.ndarray:
    """Central-difference gradient estimate, one coordinate at a time."""
    if not step > 0:
        raise ConfigurationError("finite-difference step must be positive", "step")
    params = np.asarray(params, dtype=np.float64)
    _check(model, params, batch)
    out = np.empty_like(params)
    probe = params.copy()
    for k in range(params.size):
        orig = probe[k]
        probe[k] = orig + step
        hi = loss_only(model, probe, batch)
        probe[k] = orig - step
        lo = loss_only(model, probe, batch)
        probe[k] = orig
        out[k] = (hi - lo) / (2.0 * step)
    return out


def scores(model: ModelSpec, params: np.ndarray, features: np.ndarray) -> np.ndarray:
    if not model.is_classifier:
        raise UnsupportedOperationError("class scores are undefined for the quadratic model")
    params = np.asarray(params, dtype=np.float64)
    features = np.atleast_2d(np.asarray(features, dtype=np.float64))
    if params.size != model.dim:
        raise ConfigurationError("parameter size does not match the model", "params")
    if model.variant == SOFTMAX:
        w, b = _unpack_softmax(model, params)
        return features @ w.T + b
    w1, b1, w2, b2 = _unpack_mlp(model, params)
    return np.maximum(features @ w1.T + b1, 0.0) @ w2.T + b2


def predict(model: ModelSpec, params: np.ndarray, features: np.ndarray) -> np.ndarray:
    # np.argmax returns the first maximum, i.e. ties go to the smaller class index
    return np.argmax(scores(model, params, features), axis=1)
