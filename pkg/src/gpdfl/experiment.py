"""Assembles data, clients and attacks from an experiment config and runs them."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .attacks import DATA_ATTACKS, AttackSpec, poison_shard
from .config import ExperimentConfig
from .data import (N_CLASSES, N_PIXELS, Dataset, TriggerSpec, generate_dataset, make_triggered_testset,
                   partition)
from .engine import Objective, Simulation
from .metrics import Evaluator, MetricsRecord, attack_accuracy, class_accuracy, test_accuracy
from .model import ModelSpec
from .topology import Topology, build

TEST_SEED_OFFSET = 1_000_003


@dataclass
class Scenario:
    model: ModelSpec
    train: Dataset
    test: Dataset
    shards: list[Dataset]
    topology: Topology
    attacks: dict[int, AttackSpec]
    objectives: list[Objective]
    evaluator: Evaluator


@dataclass
class RunResult:
    seed: int
    defense: str
    attack: str
    records: list[MetricsRecord]
    simulation: Simulation


def make_model(cfg: ExperimentConfig) -> ModelSpec:
    if cfg["model.kind"] == "mlp1":
        return ModelSpec.mlp(N_PIXELS, cfg["model.n_hidden"], N_CLASSES)
    return ModelSpec.softmax(N_PIXELS, N_CLASSES)


def make_evaluator(model: ModelSpec, test: Dataset, attack: AttackSpec | None) -> Evaluator:
    if attack is not None and attack.trigger is not None:
        return Evaluator(model, test, make_triggered_testset(test, attack.trigger), attack.target_label)
    if attack is not None and attack.kind == "single_image":
        return Evaluator(model, test, target_label=attack.wrong_label, source_class=attack.source_class)
    return Evaluator(model, test)


def assemble(cfg: ExperimentConfig, attack_kind: str, seed: int, shards: list[Dataset] | None = None,
             attack: AttackSpec | None = None) -> Scenario:
    """Build the scenario for one (attack, seed) pair.

    ``shards`` and ``attack`` override the config-driven partition and attack,
    which the ablation recipe uses for its hand-placed class layout.
    """
    model = make_model(cfg)
    sigma = cfg["data.noise_sigma"]
    train = generate_dataset(seed, cfg["data.n_per_class"], sigma)
    test = generate_dataset(seed + TEST_SEED_OFFSET, cfg["data.test_per_class"], sigma)
    if shards is None:
        shards = partition(train, cfg.partition, cfg.n_clients, seed)
    topology = build(cfg["topology.kind"], cfg.n_clients, cfg["topology.rows"], cfg["topology.cols"])
    attack = attack if attack is not None else cfg.attack(attack_kind)
    attacks = {i: attack for i in cfg.malicious_ids}
    objectives = []
    for i, shard in enumerate(shards):
        poisoned = None
        if i in attacks and attack.kind in DATA_ATTACKS:
            poisoned = poison_shard(attack, shard, seed * 1000 + i)
        objectives.append(Objective(model, shard, poisoned))
    return Scenario(model, train, test, shards, topology, attacks, objectives,
                    make_evaluator(model, test, attack))


def run_one(cfg: ExperimentConfig, defense: str, attack_kind: str, seed: int,
            scenario: Scenario | None = None) -> RunResult:
    scenario = scenario or assemble(cfg, attack_kind, seed)
    sim = Simulation(cfg.engine(defense, seed), scenario.objectives, scenario.topology,
                     scenario.attacks, scenario.evaluator)
    return RunResult(seed, defense, attack_kind, sim.run(), sim)


def final_summary(values) -> tuple[float, float]:
    arr = np.asarray(list(values), dtype=np.float64)
    return float(arr.mean()), float(arr.std())


# Beneficial-component ablation: five clients, one class pair each, and the
# malicious client alone holds classes 0 and 1. It backdoors class 0 only, so
# class 1 is clean knowledge no benign client can supply.
ABLATION_CLIENTS = 5
ABLATION_DEFENSES = ("gpd", "upper", "lower")
ABLATION_POISONED = 0
ABLATION_KEPT = 1
ABLATION_TARGET = 2


def ablation_config(cfg: ExperimentConfig) -> ExperimentConfig:
    return cfg.updated({
        "n_clients": ABLATION_CLIENTS,
        "malicious_ratio": 1.0 / ABLATION_CLIENTS,
        "partition.kind": "non_overlap",
        "attack.kinds": ["backdoor9"],
    })


def ablation_scenario(cfg: ExperimentConfig, seed: int) -> Scenario:
    cfg = ablation_config(cfg)
    target = cfg["attack.target_label"]
    if target == ABLATION_POISONED:
        target = ABLATION_TARGET
    train = generate_dataset(seed, cfg["data.n_per_class"], cfg["data.noise_sigma"])
    shards = partition(train, cfg.partition, cfg.n_clients, seed)
    # non-overlap hands out classes in order, so shard 0 holds {0, 1}; rotate it to the attacker
    shards = shards[1:] + shards[:1]
    base = cfg.attack("backdoor9")
    attack = AttackSpec(
        kind="backdoor9", pi=base.pi, poison_fraction=base.poison_fraction,
        trigger=TriggerSpec.nine_pixel(target, cfg["attack.trigger_value"]),
        poison_classes=(ABLATION_POISONED,),
    )
    return assemble(cfg, "backdoor9", seed, shards=shards, attack=attack)


@dataclass(frozen=True)
class AblationRow:
    seed: int
    defense: str
    kept_class_acc: float
    poisoned_class_asr: float
    test_acc: float
    n_excluded: int


def run_ablation(cfg: ExperimentConfig, seeds, defenses=ABLATION_DEFENSES) -> list[AblationRow]:
    rows = []
    for seed in seeds:
        sc = ablation_scenario(cfg, seed)
        attack = next(iter(sc.attacks.values()))
        triggered = make_triggered_testset(sc.test.with_labels(ABLATION_POISONED), attack.trigger)
        for defense in defenses:
            res = run_one(ablation_config(cfg), defense, "backdoor9", seed, sc)
            sim = res.simulation
            theta = sim.states[sim.reference_client].theta
            rows.append(AblationRow(
                seed, defense,
                class_accuracy(sc.model, theta, sc.test, ABLATION_KEPT),
                attack_accuracy(sc.model, theta, triggered, attack.target_label),
                test_accuracy(sc.model, theta, sc.test),
                res.records[-1].n_excluded,
            ))
    return rows
