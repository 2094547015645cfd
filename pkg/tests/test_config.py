import pytest

from gpdfl.config import DEFAULTS, flatten, parse_config, validate
from gpdfl.errors import ConfigurationError


def test_empty_file_gives_defaults(tmp_path):
    p = tmp_path / "empty.yaml"
    p.write_text("")
    cfg = parse_config(p)
    assert cfg["engine.lambda"] == 0.01
    assert cfg["engine.rounds"] == 50
    assert cfg.n_clients == 10
    assert cfg["topology.kind"] == "full"
    assert cfg["malicious_ratio"] == 0.2
    assert cfg["attack.pi"] == 1.0
    assert cfg["detection.threshold_factor"] == 0.1
    assert cfg["partition.alpha"] == 0.1
    assert cfg["noise.laplace_scale"] == 0.0001
    assert cfg.values == validate({}).values


def test_non_integer_malicious_count():
    with pytest.raises(ConfigurationError) as exc:
        validate({"malicious_ratio": 0.25})
    assert exc.value.key == "malicious_ratio"


def test_unknown_topology_names_key():
    with pytest.raises(ConfigurationError) as exc:
        validate({"topology.kind": "torus"})
    assert exc.value.key == "topology.kind"
    assert "topology.kind" in str(exc.value)


def test_unknown_key_rejected():
    with pytest.raises(ConfigurationError) as exc:
        validate({"engine.momentum": 0.9})
    assert exc.value.key == "engine.momentum"


@pytest.mark.parametrize("key,value", [
    ("engine.rounds", 0), ("engine.lambda", -0.1), ("attack.pi", 1.5), ("seeds", [-1]),
    ("defenses", ["krum"]), ("attack.kinds", ["fang"]), ("detection.kind", "median"),
    ("partition.kind", "feature"), ("n_clients", 1), ("detection.latch", "yes"),
])
def test_constraint_violations_name_the_key(key, value):
    with pytest.raises(ConfigurationError) as exc:
        validate({key: value})
    assert exc.value.key == key


def test_nested_yaml_is_flattened(tmp_path):
    p = tmp_path / "c.yaml"
    p.write_text("engine:\n  lambda: 0.05\n  rounds: 7\nseeds: [1, 2]\n")
    cfg = parse_config(p)
    assert cfg["engine.lambda"] == 0.05 and cfg["engine.rounds"] == 7 and cfg["seeds"] == [1, 2]
    assert flatten({"a": {"b": 1}}) == {"a.b": 1}


def test_missing_file():
    with pytest.raises(FileNotFoundError):
        parse_config("/nonexistent/config.yaml")


def test_malicious_ids_are_highest():
    assert validate({}).malicious_ids == [8, 9]
    assert validate({"malicious_ratio": 0.0}).malicious_ids == []


def test_defense_mapping():
    cfg = validate({})
    assert cfg.engine("gpd", 0).rule == "gpd"
    up = cfg.engine("upper", 0)
    assert up.rule == "dsgt" and up.benign_only
    low = cfg.engine("lower", 0)
    assert low.rule == "dsgt" and not low.benign_only and low.laplace_scale is None
    assert cfg.engine("ldp_noise", 0).laplace_scale == 1e-4


def test_full_batch_spellings():
    assert validate({"engine.batch_size": "full"})["engine.batch_size"] is None
    assert validate({"engine.batch_size": 32})["engine.batch_size"] == 32


def test_every_default_validates():
    assert set(validate({}).values) == set(DEFAULTS)
