import pytest

import penbsde.config as cfgmod
from penbsde.config import ExperimentConfig, load_config, parse_config, serialize_config
from penbsde.errors import ConfigError


def test_defaults_are_valid():
    cfg = ExperimentConfig()
    cfg.validate()
    assert cfg.model_name == "fuel1d"
    assert cfg.j_schedule == [1, 2, 4, 8, 16, 32, 64]


def test_parse_round_trip_canonical():
    cfg = parse_config(
        "version = 1\n"
        "model.name = lq1d\n"
        "grid.m = 25  # comment\n"
        "mc.N = 5000\n"
        "basis.bandwidth = 0.4\n"
        "penalty.schedule = 1.0,2.0,8.0\n"
        "model.a_max = 2.0\n"
    )
    assert cfg.model_name == "lq1d"
    assert cfg.m == 25
    assert cfg.basis_bandwidth == 0.4
    assert cfg.j_schedule == [1.0, 2.0, 8.0]
    assert cfg.model_params == {"a_max": 2.0}
    text = serialize_config(cfg)
    again = parse_config(text)
    assert serialize_config(again) == text


def test_unknown_key_rejected():
    with pytest.raises(ConfigError, match="unknown key"):
        parse_config("grid.mm = 10\n")


def test_duplicate_key_rejected():
    with pytest.raises(ConfigError, match="duplicate"):
        parse_config("grid.m = 10\ngrid.m = 20\n")


def test_bad_version_rejected():
    with pytest.raises(ConfigError, match="version"):
        parse_config(f"version = {cfgmod.FORMAT_VERSION + 1}\n")


def test_malformed_line_rejected():
    with pytest.raises(ConfigError, match="key = value"):
        parse_config("grid.m: 10\n")


def test_unparseable_value_rejected():
    with pytest.raises(ConfigError):
        parse_config("grid.m = ten\n")
    with pytest.raises(ConfigError):
        parse_config("output.figures = maybe\n")


def test_model_params_must_be_numeric():
    with pytest.raises(ConfigError, match="numeric"):
        parse_config("model.kappa = soft\n")


def test_semantic_validation():
    with pytest.raises(ConfigError, match="schedule"):
        parse_config("penalty.schedule = 4.0,2.0\n")
    with pytest.raises(ConfigError, match="not a builtin"):
        parse_config("model.name = mystery\n")
    with pytest.raises(ConfigError, match="bandwidth"):
        parse_config("basis.bandwidth = 0.0\n")


def test_load_config_missing_file(tmp_path):
    with pytest.raises(ConfigError, match="cannot read"):
        load_config(str(tmp_path / "absent.cfg"))
