"""Per-round evaluation quantities."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from itertools import combinations

import numpy as np

from .data import Dataset
from .errors import InputError
from .model import ModelSpec, predict


@dataclass(frozen=True)
class MetricsRecord:
    round: int
    test_accuracy: float
    attack_accuracy: float
    tracking_residual: float
    consensus_error: float
    n_excluded: int
    wall_time_ms: float

    def as_dict(self) -> dict:
        return asdict(self)


def test_accuracy(model: ModelSpec, params, clean_test: Dataset) -> float:
    if len(clean_test) == 0:
        raise InputError("empty test set")
    return float(np.mean(predict(model, params, clean_test.images) == clean_test.labels))


def class_accuracy(model: ModelSpec, params, dataset: Dataset, label: int) -> float:
    return test_accuracy(model, params, dataset.with_labels(label))


def attack_accuracy(model: ModelSpec, params, triggered_test: Dataset, target_label: int) -> float:
    """Share of triggered inputs classified as the attacker's target."""
    if len(triggered_test) == 0:
        raise InputError("empty triggered test set")
    return float(np.mean(predict(model, params, triggered_test.images) == target_label))


def tracking_residual(gammas, grads) -> float:
    """|| sum_i gamma_i - sum_i grad_i ||_2 over the supplied (benign) clients."""
    gammas = list(gammas)
    if not gammas:
        return 0.0
    return float(np.linalg.norm(np.sum(gammas, axis=0) - np.sum(list(grads), axis=0)))


def consensus_error(thetas) -> float:
    """Largest pairwise distance between model vectors; 0 for fewer than two."""
    thetas = list(thetas)
    if len(thetas) < 2:
        return 0.0
    return max(_distance(a, b) for a, b in combinations(thetas, 2))


def _distance(a, b) -> float:
    # scaled so that tiny but nonzero gaps do not underflow to 0
    d = np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64)
    s = float(np.max(np.abs(d))) if d.size else 0.0
    if s == 0.0 or not np.isfinite(s):
        return s
    return float(s * np.linalg.norm(d / s))


class Evaluator:
    """Clean and attack accuracy of a classifier parameter vector.

    The attack metric depends on the attack: triggered-input success for
    backdoors, the share of source-class inputs pushed to the wrong label for
    the single-image attack, and the plain error rate for untargeted attacks.
    """

    def __init__(self, model: ModelSpec, clean_test: Dataset, triggered_test: Dataset | None = None,
                 target_label: int | None = None, source_class: int | None = None):
        self.model = model
        self.clean_test = clean_test
        self.triggered_test = triggered_test
        self.target_label = target_label
        self.source_test = clean_test.with_labels(source_class) if source_class is not None else None

    def __call__(self, params) -> tuple[float, float]:
        acc = test_accuracy(self.model, params, self.clean_test)
        if self.triggered_test is not None:
            asr = attack_accuracy(self.model, params, self.triggered_test, self.target_label)
        elif self.source_test is not None:
            asr = attack_accuracy(self.model, params, self.source_test, self.target_label)
        else:
            asr = 1.0 - acc
        return acc, asr


NAN = math.nan
