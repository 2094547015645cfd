"""Malicious-client gradient construction."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import Dataset, TriggerSpec, apply_backdoor, inject_single_image
from .errors import ConfigurationError, InputError
from .model import ModelSpec, eval_loss_grad

ATTACK_KINDS = ("backdoor9", "backdoor1", "single_image", "lie_deviation", "constant")
DATA_ATTACKS = ("backdoor9", "backdoor1", "single_image")


@dataclass(frozen=True)
class AttackSpec:
    """Attack kind and its knobs.

    ``pi`` is the malicious level mixing the honest and attack gradients.
    ``constant`` broadcasts a fixed ``vector`` as the attack gradient; it is
    meant for quadratic toy runs where there is no data to poison.
    """

    kind: str = "backdoor9"
    pi: float = 1.0
    trigger: TriggerSpec | None = None
    z: float = 1.0
    poison_fraction: float = 1.0
    source_class: int = 1
    wrong_label: int = 7
    copies: int = 50
    # restricts backdoor poisoning to these source classes; None means all
    poison_classes: tuple[int, ...] | None = None
    vector: np.ndarray | None = field(default=None, compare=False)

    def __post_init__(self):
        if self.kind not in ATTACK_KINDS:
            raise ConfigurationError(
                f"unknown attack {self.kind!r}; expected one of {ATTACK_KINDS}", "attack.kind"
            )
        if not 0.0 <= self.pi <= 1.0:
            raise ConfigurationError("malicious level pi must lie in [0, 1]", "attack.pi")
        if self.z < 0:
            raise ConfigurationError("z must be >= 0", "attack.z")
        if not 0.0 <= self.poison_fraction <= 1.0:
            raise ConfigurationError("poison_fraction must lie in [0, 1]", "attack.poison_fraction")
        if self.kind in ("backdoor9", "backdoor1") and self.trigger is None:
            make = TriggerSpec.nine_pixel if self.kind == "backdoor9" else TriggerSpec.one_pixel
            object.__setattr__(self, "trigger", make())
        if self.kind == "constant" and self.vector is None:
            raise ConfigurationError("constant attack needs a vector", "attack.vector")

    @property
    def target_label(self) -> int | None:
        if self.trigger is not None:
            return self.trigger.target_label
        if self.kind == "single_image":
            return self.wrong_label
        return None


def malicious_tracking_variable(clean_grad, malicious_grad, pi: float) -> np.ndarray:
    clean_grad = np.asarray(clean_grad, dtype=np.float64)
    malicious_grad = np.asarray(malicious_grad, dtype=np.float64)
    if clean_grad.shape != malicious_grad.shape:
        raise ConfigurationError("clean and malicious gradients differ in shape", "attack")
    if pi == 0.0:
        return clean_grad.copy()
    if pi == 1.0:
        return malicious_grad.copy()
    return (1.0 - pi) * clean_grad + pi * malicious_grad


def poison_shard(spec: AttackSpec, shard: Dataset, seed: int) -> Dataset:
    """The training data a malicious client derives its attack gradient from."""
    if spec.kind in ("backdoor9", "backdoor1"):
        if spec.poison_classes is None:
            return apply_backdoor(shard, spec.trigger, spec.poison_fraction, seed)
        sel = np.isin(shard.labels, spec.poison_classes)
        poisoned = apply_backdoor(shard.subset(np.flatnonzero(sel)), spec.trigger,
                                  spec.poison_fraction, seed)
        images = shard.images.copy()
        labels = shard.labels.copy()
        images[sel] = poisoned.images
        labels[sel] = poisoned.labels
        return Dataset(images, labels, shard.prototypes, shard.index)
    if spec.kind == "single_image":
        return inject_single_image(shard, spec.source_class, spec.wrong_label, spec.copies, seed)
    raise InputError(f"{spec.kind} does not transform training data")


def malicious_loss_grad(spec: AttackSpec, model: ModelSpec, params, clean_shard: Dataset, seed: int):
    """Honest gradient on the clean shard and attack gradient on its poisoned copy."""
    if spec.kind not in DATA_ATTACKS:
        raise InputError(f"{spec.kind} is not a data-poisoning attack")
    _, clean = eval_loss_grad(model, params, clean_shard.as_batch())
    _, bad = eval_loss_grad(model, params, poison_shard(spec, clean_shard, seed).as_batch())
    return clean, bad


def craft_lie_deviation(benign_gammas, z: float) -> np.ndarray:
    """Coordinatewise benign mean shifted by z population standard deviations."""
    stack = np.asarray([np.asarray(g, dtype=np.float64) for g in benign_gammas])
    if stack.ndim != 2 or len(stack) < 2:
        raise InputError("the deviation attack needs at least two benign vectors")
    return stack.mean(axis=0) + z * stack.std(axis=0)
