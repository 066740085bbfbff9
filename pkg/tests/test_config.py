import json

import pytest

from src.config import Config, ConfigError, RecoveryError, config_hash, read_json, write_json_atomic

from conftest import ROOT


def test_project_config_matches_defaults():
    settings = Config(ROOT / "config.json")
    assert settings.config == Config._get_default_config()


def test_missing_file_uses_defaults(tmp_path):
    settings = Config(tmp_path / "absent.json")
    assert settings.get("adaptation.K") == 20
    assert settings.get("adaptation.delta") == 0.02
    assert settings.layer_sizes == (6, 40, 40, 3)


def test_partial_file_is_merged(tmp_path):
    path = tmp_path / "settings.json"
    path.write_text(json.dumps({"adaptation": {"K": 50}, "meta": {"optimizer": "adam"}}), encoding="utf-8")
    settings = Config(path)
    assert settings.get("adaptation.K") == 50
    assert settings.get("adaptation.delta") == 0.02
    assert settings.meta_config.optimizer == "adam"
    assert settings.adapt_config.K == 50


def test_empty_file_uses_defaults(tmp_path):
    path = tmp_path / "settings.json"
    path.write_text("   ", encoding="utf-8")
    assert Config(path).config == Config._get_default_config()


def test_invalid_json_is_reported(tmp_path):
    path = tmp_path / "settings.json"
    path.write_text("{\"plant\": ", encoding="utf-8")
    with pytest.raises(ConfigError) as exc:
        Config(path)
    assert exc.value.code == "invalid config"
    path.write_text("[1, 2]", encoding="utf-8")
    with pytest.raises(ConfigError):
        Config(path)


def test_invalid_plant_section(tmp_path):
    path = tmp_path / "settings.json"
    path.write_text(json.dumps({"plant": {"max_rotor_thrust": 0.5}}), encoding="utf-8")
    with pytest.raises(ConfigError):
        Config(path).quad_params


def test_get_set_and_seed_override(tmp_path):
    settings = Config(tmp_path / "absent.json")
    assert settings.get("no.such.key", "x") == "x"
    before = settings.hash
    settings.set("adaptation.delta", 0.05)
    assert settings.get("adaptation.delta") == 0.05
    assert settings.hash != before

    settings.override_seed(7)
    assert settings.init_seed == 7
    assert settings.meta_config.seed == 7
    assert settings.adapt_config.seed == 7


def test_save_round_trip(tmp_path):
    settings = Config(tmp_path / "absent.json")
    settings.set("meta.beta", 0.002)
    settings.save(tmp_path / "saved.json")
    assert Config(tmp_path / "saved.json").get("meta.beta") == 0.002
    assert not list(tmp_path.glob("*.tmp"))


def test_config_hash_ignores_key_order():
    assert config_hash({"a": 1, "b": [1, 2]}) == config_hash({"b": [1, 2], "a": 1})
    assert config_hash({"a": 1}) != config_hash({"a": 2})
    assert len(config_hash({})) == 64


def test_read_json_errors(tmp_path):
    with pytest.raises(FileNotFoundError):
        read_json(tmp_path / "absent.json")
    broken = tmp_path / "broken.json"
    broken.write_text("{", encoding="utf-8")
    with pytest.raises(ConfigError):
        read_json(broken)
    write_json_atomic(tmp_path / "nested" / "ok.json", {"b": 1, "a": 2})
    assert read_json(tmp_path / "nested" / "ok.json") == {"a": 2, "b": 1}


def test_error_payload_skips_empty_details():
    error = RecoveryError("сбой", step=3, arm=None)
    assert error.to_dict() == {"error": "error", "message": "сбой", "step": 3}


def test_simulation_setup_from_settings(settings):
    setup = settings.sim_setup
    assert setup.dt == 0.001
    assert settings.sim_step == 0.02
    assert setup.gains.pos_kp == (25.0, 25.0, 25.0)
    assert setup.gains.version == "2026.1"
