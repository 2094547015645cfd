import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gpdfl.config import validate
from gpdfl.data import TriggerSpec, apply_backdoor, generate_dataset, make_triggered_testset
from gpdfl.errors import InputError
from gpdfl.experiment import run_one
from gpdfl import metrics
from gpdfl.metrics import (
    Evaluator, MetricsRecord, attack_accuracy, class_accuracy, consensus_error, tracking_residual,
)
from gpdfl.model import ModelSpec, eval_loss_grad

MODEL = ModelSpec.softmax(64, 10)


def _train(data, steps=300, lr=1.0):
    p = np.zeros(MODEL.dim)
    batch = data.as_batch()
    for _ in range(steps):
        p -= lr * eval_loss_grad(MODEL, p, batch)[1]
    return p


@pytest.fixture(scope="module")
def trained():
    train = generate_dataset(0, 50)
    return train, _train(train)


def test_perfect_on_own_training_set(trained):
    train, p = trained
    assert metrics.test_accuracy(MODEL, p, train) == 1.0


def test_zero_params_on_balanced_set():
    assert metrics.test_accuracy(MODEL, np.zeros(MODEL.dim), generate_dataset(0, 10)) == pytest.approx(0.1)


def test_centralized_training_generalizes(trained):
    _, p = trained
    assert metrics.test_accuracy(MODEL, p, generate_dataset(500, 50)) > 0.9


def test_class_accuracy(trained):
    _, p = trained
    test = generate_dataset(9, 20)
    assert class_accuracy(MODEL, p, test, 3) == pytest.approx(
        np.mean(np.argmax(test.with_labels(3).images @ p[:640].reshape(10, 64).T + p[640:], 1) == 3))


def test_attack_accuracy_untrained_base_rate():
    test = generate_dataset(1, 10)
    z = np.zeros(MODEL.dim)
    assert attack_accuracy(MODEL, z, make_triggered_testset(test, TriggerSpec.nine_pixel(0)), 0) == 1.0
    assert attack_accuracy(MODEL, z, make_triggered_testset(test, TriggerSpec.nine_pixel(5)), 5) == 0.0


def test_backdoored_training_succeeds():
    train = generate_dataset(2, 50)
    trig = TriggerSpec.nine_pixel(0)
    p = _train(apply_backdoor(train, trig, 0.3, 0), steps=600)
    triggered = make_triggered_testset(generate_dataset(77, 20), trig)
    assert attack_accuracy(MODEL, p, triggered, 0) >= 0.8


def test_upper_baseline_low_asr():
    cfg = validate({})
    rec = run_one(cfg, "upper", "backdoor9", 0).records[-1]
    assert rec.attack_accuracy <= 0.2


def test_empty_sets_rejected():
    empty = generate_dataset(0, 2).with_labels(11)
    with pytest.raises(InputError):
        metrics.test_accuracy(MODEL, np.zeros(MODEL.dim), empty)
    with pytest.raises(InputError):
        attack_accuracy(MODEL, np.zeros(MODEL.dim), empty, 0)


def test_tracking_residual():
    g = [np.array([1.0, 2.0]), np.array([-1.0, 0.5])]
    assert tracking_residual(g, g) == 0.0
    assert tracking_residual(g, [np.zeros(2), np.zeros(2)]) == pytest.approx(np.hypot(0.0, 2.5))
    assert tracking_residual([], []) == 0.0


def test_consensus_error_examples():
    v = np.array([1.0, -2.0])
    assert consensus_error([v, v, v]) == 0.0
    assert consensus_error([np.zeros(2), np.array([3.0, 4.0])]) == 5.0
    assert consensus_error([v]) == 0.0


@settings(max_examples=40, deadline=None)
@given(st.lists(st.lists(st.floats(-100, 100), min_size=3, max_size=3), min_size=2, max_size=6))
def test_consensus_error_properties(points):
    pts = [np.array(p) for p in points]
    e = consensus_error(pts)
    assert e >= 0
    assert e == consensus_error(pts[::-1])
    assert (e == 0) == all(np.array_equal(pts[0], p) for p in pts)


def test_evaluator_modes(trained):
    _, p = trained
    test = generate_dataset(3, 10)
    acc, asr = Evaluator(MODEL, test)(p)
    assert asr == pytest.approx(1 - acc)
    ev = Evaluator(MODEL, test, target_label=7, source_class=1)
    assert ev(p)[1] == attack_accuracy(MODEL, p, test.with_labels(1), 7)


def test_record_dict_order():
    rec = MetricsRecord(1, 0.5, 0.1, 0.0, 0.0, 0, 1.0)
    assert list(rec.as_dict()) == ["round", "test_accuracy", "attack_accuracy", "tracking_residual",
                                   "consensus_error", "n_excluded", "wall_time_ms"]
