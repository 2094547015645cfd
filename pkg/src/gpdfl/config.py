"""Experiment configuration: a flat YAML mapping of dotted keys.

Example::

    n_clients: 10
    malicious_ratio: 0.2
    engine.lambda: 0.01
    detection.kind: consistency
    attack.kinds: [backdoor9]

Nested mappings are accepted too and flattened (``engine: {lambda: 0.01}``).
Missing keys take the defaults in ``DEFAULTS``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any

import yaml

from .attacks import ATTACK_KINDS, AttackSpec
from .data import N_CLASSES, PartitionSpec, TriggerSpec
from .detection import DetectionConfig
from .engine import EngineConfig
from .errors import ConfigurationError
from .topology import KINDS as TOPOLOGY_KINDS

DEFENSES = ("gpd", "upper", "lower", "ldp_noise")
MODEL_KINDS = ("softmax_regression", "mlp1")
OUTPUT_FORMATS = ("csv", "jsonl")

DEFAULTS: dict[str, Any] = {
    "n_clients": 10,
    "malicious_ratio": 0.2,
    "seeds": [0],
    "defenses": list(DEFENSES),
    "topology.kind": "full",
    "topology.rows": None,
    "topology.cols": None,
    "partition.kind": "iid",
    "partition.alpha": 0.1,
    "data.n_per_class": 100,
    "data.test_per_class": 50,
    "data.noise_sigma": 0.1,
    "model.kind": "softmax_regression",
    "model.n_hidden": 32,
    "engine.lambda": 0.01,
    "engine.rounds": 50,
    "engine.batch_size": None,
    "engine.init_scale": 0.01,
    "detection.kind": "consistency",
    "detection.threshold_factor": 0.1,
    "detection.latch": True,
    "attack.kinds": ["backdoor9"],
    "attack.pi": 1.0,
    "attack.z": 1.0,
    "attack.poison_fraction": 1.0,
    "attack.target_label": 0,
    "attack.trigger_value": 1.0,
    "attack.source_class": 1,
    "attack.wrong_label": 7,
    "attack.copies": 50,
    "noise.laplace_scale": 0.0001,
    "output.path": "results.csv",
    "output.format": "csv",
    "output.timing": False,
}


@dataclass(frozen=True)
class ExperimentConfig:
    values: dict = field(default_factory=lambda: dict(DEFAULTS))

    def __getitem__(self, key: str):
        return self.values[key]

    def with_overrides(self, **dotted) -> "ExperimentConfig":
        merged = dict(self.values)
        merged.update({k.replace("__", "."): v for k, v in dotted.items()})
        return validate(merged)

    def updated(self, mapping: dict) -> "ExperimentConfig":
        merged = dict(self.values)
        merged.update(mapping)
        return validate(merged)

    @property
    def n_clients(self) -> int:
        return self["n_clients"]

    @property
    def n_malicious(self) -> int:
        return int(round(self["malicious_ratio"] * self["n_clients"]))

    @property
    def malicious_ids(self) -> list[int]:
        """Highest ids are malicious, so client 0 is always benign."""
        n = self.n_clients
        return list(range(n - self.n_malicious, n))

    @property
    def partition(self) -> PartitionSpec:
        return PartitionSpec(self["partition.kind"], self["partition.alpha"])

    @property
    def detection(self) -> DetectionConfig:
        return DetectionConfig(
            self["detection.kind"], self["detection.threshold_factor"], self["detection.latch"]
        )

    def attack(self, kind: str) -> AttackSpec:
        trigger = None
        if kind == "backdoor9":
            trigger = TriggerSpec.nine_pixel(self["attack.target_label"], self["attack.trigger_value"])
        elif kind == "backdoor1":
            trigger = TriggerSpec.one_pixel(self["attack.target_label"], self["attack.trigger_value"])
        return AttackSpec(
            kind=kind,
            pi=self["attack.pi"],
            trigger=trigger,
            z=self["attack.z"],
            poison_fraction=self["attack.poison_fraction"],
            source_class=self["attack.source_class"],
            wrong_label=self["attack.wrong_label"],
            copies=self["attack.copies"],
        )

    def engine(self, defense: str, seed: int) -> EngineConfig:
        common = dict(
            lam=self["engine.lambda"],
            rounds=self["engine.rounds"],
            batch_size=self["engine.batch_size"],
            seed=seed,
            init_scale=self["engine.init_scale"],
        )
        none = DetectionConfig("none", self["detection.threshold_factor"])
        if defense == "gpd":
            return EngineConfig(rule="gpd", detection=self.detection, **common)
        if defense == "upper":
            return EngineConfig(rule="dsgt", detection=none, benign_only=True, **common)
        if defense == "lower":
            return EngineConfig(rule="dsgt", detection=none, **common)
        return EngineConfig(rule="dsgt", detection=none, laplace_scale=self["noise.laplace_scale"], **common)


def flatten(mapping: dict, prefix: str = "") -> dict:
    out = {}
    for key, value in mapping.items():
        name = f"{prefix}{key}"
        if isinstance(value, dict):
            out.update(flatten(value, name + "."))
        else:
            out[name] = value
    return out


def _is_int(v) -> bool:
    return isinstance(v, int) and not isinstance(v, bool)


def _is_real(v) -> bool:
    return (isinstance(v, (int, float)) and not isinstance(v, bool)) and math.isfinite(v)


def _require(cond: bool, key: str, msg: str) -> None:
    if not cond:
        raise ConfigurationError(msg, key)


def _enum(values: dict, key: str, allowed) -> None:
    _require(values[key] in allowed, key, f"invalid value {values[key]!r}; expected one of {tuple(allowed)}")


def _as_list(values: dict, key: str) -> list:
    v = values[key]
    if isinstance(v, (str, int)) and not isinstance(v, bool):
        v = [v]
    _require(isinstance(v, list) and len(v) > 0, key, "expected a non-empty list")
    return v


def validate(raw: dict) -> ExperimentConfig:
    """Apply defaults, check every key, and return a frozen config."""
    unknown = sorted(set(raw) - set(DEFAULTS))
    if unknown:
        raise ConfigurationError("unknown configuration key", unknown[0])
    v = dict(DEFAULTS)
    v.update(raw)

    for key in ("n_clients", "data.n_per_class", "data.test_per_class", "engine.rounds",
                "model.n_hidden", "attack.copies"):
        _require(_is_int(v[key]) and v[key] >= 1, key, "expected a positive integer")
    _require(v["n_clients"] >= 2, "n_clients", "need at least two clients")
    for key in ("malicious_ratio", "partition.alpha", "data.noise_sigma", "engine.lambda",
                "engine.init_scale", "detection.threshold_factor", "attack.pi", "attack.z",
                "attack.poison_fraction", "attack.trigger_value", "noise.laplace_scale"):
        _require(_is_real(v[key]), key, "expected a finite number")
        v[key] = float(v[key])
    _require(0.0 <= v["malicious_ratio"] < 1.0, "malicious_ratio", "must lie in [0, 1)")
    count = v["malicious_ratio"] * v["n_clients"]
    _require(abs(count - round(count)) < 1e-9, "malicious_ratio",
             f"malicious_ratio * n_clients = {count:g} is not a whole number of clients")
    _require(v["partition.alpha"] > 0, "partition.alpha", "must be positive")
    _require(v["engine.lambda"] > 0, "engine.lambda", "must be positive")
    _require(0 < v["detection.threshold_factor"] < 1, "detection.threshold_factor", "must lie in (0, 1)")
    _require(0 <= v["attack.pi"] <= 1, "attack.pi", "must lie in [0, 1]")
    _require(0 <= v["attack.poison_fraction"] <= 1, "attack.poison_fraction", "must lie in [0, 1]")
    _require(0 <= v["attack.trigger_value"] <= 1, "attack.trigger_value", "must lie in [0, 1]")
    _require(v["attack.z"] >= 0, "attack.z", "must be >= 0")
    _require(v["noise.laplace_scale"] >= 0, "noise.laplace_scale", "must be >= 0")
    for key in ("attack.target_label", "attack.source_class", "attack.wrong_label"):
        _require(_is_int(v[key]) and 0 <= v[key] < N_CLASSES, key, f"expected a class index in [0, {N_CLASSES})")
    bs = v["engine.batch_size"]
    if bs in (0, "full"):
        v["engine.batch_size"] = None
    else:
        _require(bs is None or (_is_int(bs) and bs >= 1), "engine.batch_size", "expected a positive integer or 'full'")
    for key in ("detection.latch", "output.timing"):
        _require(isinstance(v[key], bool), key, "expected true or false")

    _enum(v, "topology.kind", TOPOLOGY_KINDS)
    _enum(v, "partition.kind", ("iid", "non_overlap", "label_dirichlet", "quantity_dirichlet"))
    _enum(v, "model.kind", MODEL_KINDS)
    _enum(v, "detection.kind", ("consistency", "similarity", "none"))
    _enum(v, "output.format", OUTPUT_FORMATS)
    v["seeds"] = _as_list(v, "seeds")
    for s in v["seeds"]:
        _require(_is_int(s) and s >= 0, "seeds", "seeds must be non-negative integers")
    v["defenses"] = _as_list(v, "defenses")
    for d in v["defenses"]:
        _require(d in DEFENSES, "defenses", f"invalid value {d!r}; expected one of {DEFENSES}")
    v["attack.kinds"] = _as_list(v, "attack.kinds")
    allowed = tuple(k for k in ATTACK_KINDS if k != "constant")
    for k in v["attack.kinds"]:
        _require(k in allowed, "attack.kinds", f"invalid value {k!r}; expected one of {allowed}")
    if v["partition.kind"] == "non_overlap":
        _require(v["n_clients"] <= N_CLASSES, "n_clients", "non_overlap needs at most 10 clients")
    _require(isinstance(v["output.path"], str) and v["output.path"], "output.path", "expected a path")
    return ExperimentConfig(v)


def parse_config(path) -> ExperimentConfig:
    """Read a config file; an empty file yields the pure defaults."""
    text = Path(path).read_text()
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigurationError(f"cannot parse {path}: {exc}") from exc
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigurationError(f"{path} must hold a key/value mapping")
    return validate(flatten(raw))
