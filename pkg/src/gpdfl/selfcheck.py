"""Executable invariants: tracking identities, ledger exactness, row checks.

Each check returns a ``CheckResult``; ``run_selfcheck`` runs them all. The
``hooks`` argument lets a caller inject a fault (a scaled compensator, a
latch that skips renormalisation) to confirm the checks can fail.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, replace

import numpy as np

from .attacks import AttackSpec
from .config import validate
from .detection import DetectionConfig
from .engine import EngineConfig, Hooks, Objective, Simulation, dsgt_step, publish
from .experiment import assemble
from .model import ModelSpec
from .topology import build

IDENTITY_TOL = 1e-9
ROW_TOL = 1e-12


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    detail: str


def quadratic_objectives(n: int, dim: int = 2, seed: int = 0, spread: float = 3.0) -> list[Objective]:
    centers = np.random.default_rng(seed).uniform(-spread, spread, size=(n, dim))
    return [Objective(ModelSpec.quadratic(c)) for c in centers]


def softmax_objectives(n: int, seed: int = 0) -> list[Objective]:
    cfg = validate({"n_clients": n, "malicious_ratio": 0.0, "data.n_per_class": 20})
    return assemble(cfg, "backdoor9", seed).objectives


def _benign_residuals(sim: Simulation) -> list[float]:
    out = [sim.measure().tracking_residual]
    for _ in range(sim.config.rounds):
        out.append(sim.step().tracking_residual)
    return out


def check_tracking_identity(hooks: Hooks = Hooks(), rounds: int = 100) -> CheckResult:
    worst = 0.0
    for rule in ("dsgt", "gpd"):
        cfg = EngineConfig(rule=rule, detection=DetectionConfig("none"), lam=0.1, rounds=rounds,
                           init_scale=1.0, hooks=hooks)
        sim = Simulation(cfg, quadratic_objectives(5), build("full", 5))
        worst = max(worst, max(_benign_residuals(sim)))
    return CheckResult("tracking_identity", worst <= IDENTITY_TOL, f"max residual {worst:.3e}")


def gpd_vs_dsgt_deviation(objectives, rounds: int = 100, lam: float = 0.1, init_scale: float = 1.0,
                          hooks: Hooks = Hooks()) -> float:
    """Largest per-round theta/gamma gap between GPD (no detection) and plain tracking."""
    top = build("full", len(objectives))
    base = dict(detection=DetectionConfig("none"), lam=lam, rounds=rounds, init_scale=init_scale)
    gpd = Simulation(EngineConfig(rule="gpd", hooks=hooks, **base), objectives, top)
    ref = Simulation(EngineConfig(rule="dsgt", **base), objectives, top)
    worst = 0.0
    for _ in range(rounds):
        gpd.step()
        ref.step()
        for i in gpd.states:
            a, b = gpd.states[i], ref.states[i]
            worst = max(worst, np.max(np.abs(a.theta - b.theta)), np.max(np.abs(a.gamma - b.gamma)))
    return float(worst)


def check_gpd_equals_dsgt(hooks: Hooks = Hooks()) -> CheckResult:
    q = gpd_vs_dsgt_deviation(quadratic_objectives(5), hooks=hooks)
    s = gpd_vs_dsgt_deviation(softmax_objectives(5), lam=0.5, init_scale=0.01, hooks=hooks)
    worst = max(q, s)
    return CheckResult("gpd_equals_dsgt", worst <= IDENTITY_TOL, f"quadratic {q:.3e}, softmax {s:.3e}")


def scripted_latch_simulation(n: int = 4, rounds: int = 60, hooks: Hooks = Hooks()) -> Simulation:
    """Quadratic network whose last client broadcasts a constant far-off vector."""
    objectives = quadratic_objectives(n)
    attack = AttackSpec("constant", vector=np.full(2, 6.0))
    cfg = EngineConfig(rule="gpd", lam=0.1, rounds=rounds, init_scale=1.0, hooks=hooks)
    return Simulation(cfg, objectives, build("full", n), {n - 1: attack})


def post_mitigation_deviation(sim: Simulation) -> tuple[int | None, float, float]:
    """Step ``sim`` to the end, comparing benign updates with plain tracking.

    Returns the first round whose gamma update runs with the malicious record
    gated off, the worst gap between GPD and the benign-restricted tracking
    form over every later round, and the worst gap in the one-shot removal at
    the gating round itself.
    """
    gated_round = None
    worst_after = 0.0
    worst_removal = 0.0
    benign = sim.benign_ids
    malicious = [i for i in sim.states if i not in benign]
    for _ in range(sim.config.rounds):
        before = {i: sim.states[i] for i in benign}
        snap = sim.snapshot()
        rnd = sim.round
        all_gated = all(m in before[i].row.excluded for i in benign for m in malicious)
        sim.step()
        for i in benign:
            old, new = before[i], sim.states[i]
            if all_gated and gated_round is not None and rnd > gated_round:
                ids = [j for j in old.row.ids if j not in old.row.excluded]
                w = np.array([old.row.weight(j) for j in ids])
                expected = new.grad - old.grad + w @ snap.gammas[ids]
                worst_after = max(worst_after, float(np.max(np.abs(new.gamma - expected))))
            if all_gated and (gated_round is None or rnd == gated_round):
                gated_round = rnd
                ungated = new.grad + new.beta.sum(axis=0) - old.gamma_cumsum
                removed = sum(new.beta_map()[m] for m in malicious)
                worst_removal = max(worst_removal, float(np.max(np.abs(new.gamma - (ungated - removed)))))
    return gated_round, worst_after, worst_removal


def check_post_mitigation(hooks: Hooks = Hooks()) -> CheckResult:
    t_gate, after, removal = post_mitigation_deviation(scripted_latch_simulation(hooks=hooks))
    ok = t_gate is not None and after <= IDENTITY_TOL and removal <= IDENTITY_TOL
    return CheckResult("post_mitigation_equivalence", ok,
                       f"gated at round {t_gate}, later gap {after:.3e}, removal gap {removal:.3e}")


def default_simulation(seed: int = 0, hooks: Hooks = Hooks(), **overrides) -> Simulation:
    cfg = validate(overrides)
    sc = assemble(cfg, cfg["attack.kinds"][0], seed)
    return Simulation(replace(cfg.engine("gpd", seed), hooks=hooks), sc.objectives, sc.topology,
                      sc.attacks, sc.evaluator)


def ledger_deviation(sim: Simulation) -> float:
    """Max |beta - shadow| where the shadow re-accumulates w * gamma per neighbour."""
    shadow = {i: {j: np.zeros_like(s.theta) for j in s.row.ids} for i, s in sim.states.items() if s.is_benign}
    worst = 0.0
    for _ in range(sim.config.rounds):
        snap = sim.snapshot()
        rows = {i: sim.states[i].row for i in shadow}
        sim.step()
        for i, acc in shadow.items():
            for j in rows[i].ids:
                if j not in rows[i].excluded:
                    acc[j] = acc[j] + rows[i].weight(j) * snap.gammas[j]
                worst = max(worst, float(np.max(np.abs(sim.states[i].beta_map()[j] - acc[j]))))
    return worst


def check_ledger(hooks: Hooks = Hooks()) -> CheckResult:
    dev = ledger_deviation(default_simulation(hooks=hooks))
    return CheckResult("ledger_exactness", dev == 0.0, f"max deviation {dev:.3e}")


def row_violations(sim: Simulation) -> float:
    worst = 0.0
    for _ in range(sim.config.rounds):
        sim.step()
        for i in sim.benign_ids:
            row = sim.states[i].row
            mask = row.active_mask
            worst = max(worst, abs(row.weights[mask].sum() - 1.0))
            if (row.weights < 0).any() or (~mask & (row.weights != 0)).any():
                worst = max(worst, 1.0)
            if row.weight(i) <= 0:
                worst = max(worst, 1.0)
    return worst


def check_rows(hooks: Hooks = Hooks()) -> CheckResult:
    sim = default_simulation(hooks=hooks)
    worst = row_violations(sim)
    latched = len(sim.excluded_ids())
    ok = worst <= ROW_TOL and latched > 0
    return CheckResult("row_stochasticity", ok, f"max row error {worst:.3e}, {latched} neighbours latched")


def check_determinism(hooks: Hooks = Hooks()) -> CheckResult:
    def trace():
        sim = default_simulation(seed=3, hooks=hooks, **{"engine.rounds": 20})
        sim.run()
        return [(r.test_accuracy, r.attack_accuracy, r.tracking_residual, r.consensus_error, r.n_excluded)
                for r in sim.history], np.concatenate([s.theta for s in sim.states.values()])

    (a, ta), (b, tb) = trace(), trace()
    ok = a == b and np.array_equal(ta, tb)
    return CheckResult("determinism", ok, "identical traces" if ok else "traces differ")


def check_round_zero(hooks: Hooks = Hooks()) -> CheckResult:
    worst = max(default_simulation(seed=s, hooks=hooks).measure().tracking_residual for s in range(3))
    return CheckResult("round_zero_residual", worst == 0.0, f"residual {worst:.3e}")


CHECKS = (
    check_tracking_identity,
    check_gpd_equals_dsgt,
    check_post_mitigation,
    check_ledger,
    check_rows,
    check_determinism,
    check_round_zero,
)


def run_selfcheck(hooks: Hooks = Hooks(), echo=print) -> list[CheckResult]:
    results = []
    for check in CHECKS:
        start = time.perf_counter()
        res = check(hooks)
        results.append(res)
        if echo:
            mark = "PASS" if res.passed else "FAIL"
            echo(f"[{mark}] {res.name}: {res.detail} ({time.perf_counter() - start:.2f}s)")
    return results
