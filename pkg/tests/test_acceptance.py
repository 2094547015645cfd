"""Acceptance suite: one test group per numbered criterion, at the stated tolerances.

The terminal summary prints a pass/fail line per criterion (see conftest.py).
"""
import csv
import statistics
import time

import numpy as np
import pytest

from gpdfl.attacks import AttackSpec
from gpdfl.cli import main
from gpdfl.config import validate
from gpdfl.detection import DetectionConfig, cut
from gpdfl.engine import EngineConfig, Objective, Simulation
from gpdfl.experiment import assemble, run_ablation, run_one
from gpdfl.model import ModelSpec
from gpdfl.selfcheck import (default_simulation, gpd_vs_dsgt_deviation, ledger_deviation,
                             post_mitigation_deviation, quadratic_objectives, scripted_latch_simulation,
                             softmax_objectives)
from gpdfl.topology import build

TOL = 1e-9


class Timer:
    def __enter__(self):
        self.start = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.elapsed = time.perf_counter() - self.start


@pytest.mark.criterion(1, "tracking identity, benign DSGT n=5 quadratic")
def test_c1_tracking_identity():
    with Timer() as t:
        cfg = EngineConfig(rule="dsgt", detection=DetectionConfig("none"), lam=0.1, rounds=100, init_scale=1.0)
        sim = Simulation(cfg, quadratic_objectives(5), build("full", 5))
        residuals = [sim.measure().tracking_residual] + [r.tracking_residual for r in sim.run()]
    print(f"criterion 1: max residual {max(residuals):.3e} over {len(residuals)} rounds, {t.elapsed:.3f}s")
    assert len(residuals) == 101
    assert max(residuals) <= TOL
    assert t.elapsed < 1.0


@pytest.mark.criterion(2, "GPD equals DSGT without adversary")
def test_c2_gpd_equals_dsgt():
    with Timer() as t:
        q = gpd_vs_dsgt_deviation(quadratic_objectives(5), rounds=100)
        s = gpd_vs_dsgt_deviation(softmax_objectives(5), rounds=100, lam=0.5, init_scale=0.01)
    print(f"criterion 2: quadratic {q:.3e}, softmax {s:.3e}, {t.elapsed:.3f}s")
    assert q <= TOL and s <= TOL
    assert t.elapsed < 5.0


def _direct_dsgt(objectives, w, lam, rounds, theta0):
    """Dense-matrix tracking recursion written independently of the engine."""
    theta = theta0.copy()
    grad = np.array([o.full_grad(th) for o, th in zip(objectives, theta)])
    gamma = grad.copy()
    out = []
    for _ in range(rounds):
        theta = w @ (theta - lam * gamma)
        new_grad = np.array([o.full_grad(th) for o, th in zip(objectives, theta)])
        gamma = w @ gamma + new_grad - grad
        grad = new_grad
        out.append((theta.copy(), gamma.copy()))
    return out


@pytest.mark.criterion(2, "GPD equals DSGT without adversary")
@pytest.mark.parametrize("kind", ["quadratic", "softmax"])
def test_c2_gpd_matches_dense_oracle(kind):
    objectives = quadratic_objectives(5) if kind == "quadratic" else softmax_objectives(5)
    lam, init = (0.1, 1.0) if kind == "quadratic" else (0.5, 0.01)
    cfg = EngineConfig(rule="gpd", detection=DetectionConfig("none"), lam=lam, rounds=100, init_scale=init)
    sim = Simulation(cfg, objectives, build("full", 5))
    theta0 = np.array([sim.states[i].theta for i in range(5)])
    ref = _direct_dsgt(objectives, np.full((5, 5), 0.2), lam, 100, theta0)
    worst = 0.0
    for theta, gamma in ref:
        sim.step()
        got_t = np.array([sim.states[i].theta for i in range(5)])
        got_g = np.array([sim.states[i].gamma for i in range(5)])
        worst = max(worst, np.max(np.abs(got_t - theta)), np.max(np.abs(got_g - gamma)))
    print(f"criterion 2 ({kind}): dense oracle gap {worst:.3e}")
    assert worst <= TOL


@pytest.mark.criterion(3, "post-mitigation equivalence")
def test_c3_post_mitigation():
    with Timer() as t:
        sim = scripted_latch_simulation(rounds=60)
        t_gate, after, removal = post_mitigation_deviation(sim)
    print(f"criterion 3: gated at round {t_gate}, later gap {after:.3e}, removal gap {removal:.3e}, "
          f"{t.elapsed:.3f}s")
    assert t_gate is not None and t_gate < sim.config.rounds - 1
    assert after <= TOL
    assert removal <= TOL
    assert t.elapsed < 5.0


CONTOUR_CENTERS = np.array([[1.0, 2.0], [-2.0, 0.5], [3.0, -1.0]])
CONTOUR_POISON = np.array([5.0, 5.0])


def _contour(rule, detection, attacked):
    objectives = [Objective(ModelSpec.quadratic(c)) for c in CONTOUR_CENTERS]
    attacks = {2: AttackSpec("constant", pi=1.0, vector=CONTOUR_POISON)} if attacked else {}
    cfg = EngineConfig(rule=rule, detection=DetectionConfig(detection), lam=0.1, rounds=500, init_scale=1.0)
    sim = Simulation(cfg, objectives, build("full", 3), attacks)
    records = sim.run()
    benign = CONTOUR_CENTERS[sim.benign_ids]
    optimum = benign.mean(axis=0) if attacked else CONTOUR_CENTERS.mean(axis=0)
    dist = max(np.linalg.norm(sim.states[i].theta - optimum) for i in sim.benign_ids)
    return records[-1], float(dist)


@pytest.mark.criterion(4, "three-client quadratic contour under attack")
def test_c4a_all_benign_converges():
    with Timer() as t:
        last, dist = _contour("dsgt", "none", attacked=False)
    print(f"criterion 4a: consensus {last.consensus_error:.3e}, distance {dist:.3e}, {t.elapsed:.3f}s")
    assert last.consensus_error < 1e-6 and dist < 1e-6
    assert t.elapsed < 5.0


@pytest.mark.criterion(4, "three-client quadratic contour under attack")
def test_c4b_undefended_is_pulled_away():
    last, dist = _contour("dsgt", "none", attacked=True)
    print(f"criterion 4b: distance {dist:.3e}")
    assert dist > 1e-1


@pytest.mark.criterion(4, "three-client quadratic contour under attack")
def test_c4c_gpd_recovers_optimum():
    with Timer() as t:
        last, dist = _contour("gpd", "consistency", attacked=True)
    print(f"criterion 4c: distance {dist:.3e}, excluded {last.n_excluded}, {t.elapsed:.3f}s")
    assert last.n_excluded == 1
    assert dist < 1e-3
    assert t.elapsed < 5.0


@pytest.mark.criterion(5, "detection efficacy over 10 seeds")
def test_c5_detection_efficacy():
    cfg = validate({})
    caught = 0
    false_positive = 0
    for seed in range(10):
        sim = run_one(cfg, "gpd", "backdoor9", seed).simulation
        malicious = set(cfg.malicious_ids)
        rows = [sim.states[i].row for i in sim.benign_ids]
        threshold = [cut(sim.states[i].degree) for i in sim.benign_ids]
        latched = all(malicious <= r.excluded and all(r.weight(m) <= th for m in malicious)
                      for r, th in zip(rows, threshold))
        caught += latched
        false_positive += sum(len(r.excluded - malicious) for r in rows)
    print(f"criterion 5: malicious latched in {caught}/10 seeds, {false_positive} benign latches")
    assert caught >= 9
    assert false_positive == 0


@pytest.mark.criterion(6, "beneficial-component ablation")
def test_c6_beneficial_component():
    with Timer() as t:
        rows = run_ablation(validate({}), range(5))
    mean = {d: (np.mean([r.kept_class_acc for r in rows if r.defense == d]),
                np.mean([r.poisoned_class_asr for r in rows if r.defense == d]),
                np.mean([r.test_acc for r in rows if r.defense == d]))
            for d in ("gpd", "upper", "lower")}
    for d, (c1, asr, acc) in mean.items():
        print(f"criterion 6: {d:>5} class-1 acc {c1:.3f}, class-0 ASR {asr:.3f}, overall {acc:.3f}")
    gpd, upper = mean["gpd"], mean["upper"]
    assert t.elapsed < 60.0
    assert upper[0] <= 0.05
    assert gpd[1] <= 0.20
    assert gpd[2] >= upper[2]
    assert gpd[0] >= 0.30


@pytest.mark.criterion(7, "detection-variant parity with Upper")
@pytest.mark.parametrize("variant", ["consistency", "similarity"])
def test_c7_detection_variants(variant):
    with Timer() as t:
        cfg = validate({"detection.kind": variant})
        gpd, upper = [], []
        for seed in range(5):
            sc = assemble(cfg, "backdoor9", seed)
            gpd.append(run_one(cfg, "gpd", "backdoor9", seed, sc).records[-1].test_accuracy)
            upper.append(run_one(cfg, "upper", "backdoor9", seed, sc).records[-1].test_accuracy)
    gap = abs(np.mean(gpd) - np.mean(upper))
    print(f"criterion 7 ({variant}): GPD {np.mean(gpd):.3f} vs Upper {np.mean(upper):.3f}, gap {gap:.3f}, "
          f"{t.elapsed:.1f}s")
    assert t.elapsed < 60.0
    assert gap <= 0.02


@pytest.mark.criterion(8, "overhead and recording-variable storage")
def test_c8_overhead():
    cfg = validate({})
    sc = assemble(cfg, "backdoor9", 0)
    per_round = {"gpd": [], "lower": []}
    with Timer() as t:
        # interleaved repeats; the least-disturbed run of each is compared
        for _ in range(15):
            for d in per_round:
                recs = run_one(cfg, d, "backdoor9", 0, sc).records
                per_round[d].append(statistics.fmean(r.wall_time_ms for r in recs))
    gpd, lower = min(per_round["gpd"]), min(per_round["lower"])
    print(f"criterion 8: gpd {gpd:.3f} ms/round, lower {lower:.3f} ms/round, ratio {gpd / lower:.3f}, "
          f"{t.elapsed:.1f}s")
    assert t.elapsed < 30.0
    assert gpd <= 1.5 * lower


@pytest.mark.criterion(8, "overhead and recording-variable storage")
@pytest.mark.parametrize("topology", ["full", "ring", "star", "line", "grid"])
def test_c8_beta_storage(topology):
    sim = default_simulation(**{"topology.kind": topology, "engine.rounds": 3})
    sim.run()
    for i in sim.benign_ids:
        s = sim.states[i]
        assert s.beta.shape == (len(sim.topology.neighbors[i]), s.theta.size)
        assert len(s.beta_map()) == len(sim.topology.neighbors[i])
    for i, s in sim.states.items():
        if not s.is_benign:
            assert s.beta is None


@pytest.mark.criterion(9, "ledger exactness")
def test_c9_ledger():
    sim = default_simulation(**{"engine.rounds": 50})
    dev = ledger_deviation(sim)
    print(f"criterion 9: max deviation {dev!r}, excluded {sorted(sim.excluded_ids())}")
    assert dev == 0.0


@pytest.mark.criterion(10, "byte-identical CSV output")
def test_c10_determinism(tmp_path):
    cfg = tmp_path / "c.yaml"
    cfg.write_text("engine.rounds: 20\ndefenses: [gpd, lower, ldp_noise]\nattack.kinds: [backdoor9, lie_deviation]\n")
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    assert main(["run", "--config", str(cfg), "--seeds", "0,1", "--out", str(a)]) == 0
    assert main(["run", "--config", str(cfg), "--seeds", "0,1", "--out", str(b)]) == 0
    assert a.read_bytes() == b.read_bytes()
    with open(a) as fh:
        assert sum(1 for _ in csv.reader(fh)) == 1 + 2 * 3 * 2 * 20
