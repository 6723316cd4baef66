import json

import pytest

from emresformer.config import RunConfig, leaf_paths, load_config, parse_value
from emresformer.errors import ConfigError


def test_json_round_trip(tmp_path):
    cfg = RunConfig.preset("desk").override("model.em.iterations", "2")
    cfg.save(tmp_path / "c.json")
    back = load_config(tmp_path / "c.json")
    assert back == cfg
    assert back.dumps() == cfg.dumps()


def test_presets():
    desk, full = RunConfig.preset("desk"), RunConfig.preset("full")
    assert desk.model.base_channels == 8 and full.model.base_channels == 48
    assert desk.train.patch == 32 and full.train.patch == 128
    assert full.model.depths == (9, 6, 3, 0)
    with pytest.raises(ConfigError):
        RunConfig.preset("huge")


def test_partial_file_layers_over_preset(tmp_path):
    (tmp_path / "c.json").write_text(json.dumps({"train": {"epochs": 3}}))
    cfg = load_config(tmp_path / "c.json", preset="desk")
    assert cfg.train.epochs == 3 and cfg.model.base_channels == 8


@pytest.mark.parametrize("doc", [{"model": {"widht": 3}}, {"bogus": 1}, {"model": 3}])
def test_unknown_keys_rejected(tmp_path, doc):
    (tmp_path / "c.json").write_text(json.dumps(doc))
    with pytest.raises(ConfigError):
        load_config(tmp_path / "c.json")


def test_overrides():
    cfg = load_config(None, "desk", [("model.depths", "1,1,1,0"), ("train.hflip", "off"),
                                     ("rain.density", "2.5"), ("train.max_steps", "7")])
    assert cfg.model.depths == (1, 1, 1, 0)
    assert cfg.train.hflip is False and cfg.rain.density == 2.5 and cfg.train.max_steps == 7
    for bad in [("model.em", "3"), ("model.nothing", "1"), ("train.epochs", "many")]:
        with pytest.raises(ConfigError):
            load_config(None, None, [bad])


def test_override_revalidates():
    with pytest.raises(ConfigError):
        RunConfig().override("model.heads", "5,5,5,5")


def test_parse_value_types():
    assert parse_value("3", 1) == 3
    assert parse_value("0.5", 1.0) == 0.5
    assert parse_value("yes", False) is True
    assert parse_value("none", None) is None and parse_value("12", None) == 12
    assert parse_value("0.9,0.99", [0.9, 0.999]) == [0.9, 0.99]


def test_leaf_paths_cover_sections():
    paths = leaf_paths()
    assert "model.em.iterations" in paths and "train.learning_rate" in paths
    assert "metrics.window" in paths or any(p.startswith("metrics.") for p in paths)
    assert len(paths) == len(set(paths))


def test_bad_json(tmp_path):
    (tmp_path / "c.json").write_text("{")
    with pytest.raises(ConfigError, match="not valid JSON"):
        load_config(tmp_path / "c.json")
    with pytest.raises(ConfigError, match="cannot read"):
        load_config(tmp_path / "none.json")
