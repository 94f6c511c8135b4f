import json

import pytest

from rowweed.config import PipelineConfig, load_config, parse_value
from rowweed.errors import ConfigError


def test_empty_config_is_all_defaults():
    assert PipelineConfig.from_dict({}) == PipelineConfig()


def test_resolved_config_lists_every_key():
    d = PipelineConfig().to_dict()
    assert set(d) == {"synth", "segment", "hough", "slic", "labeling", "train", "inference", "eval", "seed"}
    assert d["train"]["epochs"] == 600 and d["inference"]["eps"] == 0.05
    assert d["hough"]["norm_threshold"] == 0.1 and d["slic"]["compactness"] == 20.0


def test_dict_round_trip():
    cfg = PipelineConfig().set("train.epochs", 40).set("synth.overrides.width", 512).set("seed", 3)
    back = PipelineConfig.from_dict(json.loads(json.dumps(cfg.to_dict())))
    assert back == cfg


def test_file_and_overrides(tmp_path):
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"seed": 4, "train": {"epochs": 10}, "synth": {"preset": "spinach_like"}}))
    cfg = load_config(p, ["train.epochs=20", "inference.eps=0.1", "synth.orientation_range_deg=[0, 10]"])
    assert cfg.seed == 4
    assert cfg.train.epochs == 20
    assert cfg.inference.eps == 0.1
    assert cfg.synth.preset == "spinach_like"
    assert cfg.synth.orientation_range_deg == (0, 10)


@pytest.mark.parametrize(
    "d",
    [{"nope": {}}, {"train": {"nope": 1}}, {"train": []}, {"seed": "x"}, {"inference": {"eps": 0.7}}],
)
def test_bad_config_rejected(d):
    with pytest.raises(ConfigError):
        PipelineConfig.from_dict(d)


def test_bad_override_and_file(tmp_path):
    with pytest.raises(ConfigError):
        load_config(None, ["train.epochs"])
    with pytest.raises(ConfigError):
        load_config(None, ["epochs=3"])
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(ConfigError):
        load_config(bad)
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.json")


def test_parse_value():
    assert parse_value("3") == 3
    assert parse_value("0.5") == 0.5
    assert parse_value("true") is True
    assert parse_value("spinach_like") == "spinach_like"
