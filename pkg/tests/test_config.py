import json
import logging
import os

import pytest

from src.config import (
    DEFAULT_CONFIG_PATH, PipelineConfig, load_config_file, parse_config, parse_override,
    setup_logging,
)
from src.errors import ConfigError

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))


def write(tmp_path, name, text):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


def test_defaults():
    cfg = parse_config()
    assert cfg.to_dict() == PipelineConfig().to_dict()
    assert cfg.seed == 0
    assert cfg.negmix.p == 0.5
    assert cfg.loss.lam == 0.5


def test_shipped_config_matches_defaults():
    cfg = parse_config(os.path.join(ROOT, DEFAULT_CONFIG_PATH))
    assert cfg.to_dict() == PipelineConfig().to_dict()


def test_empty_json_gives_defaults(tmp_path):
    cfg = parse_config(write(tmp_path, "cfg.json", "{}"))
    assert cfg.to_dict() == PipelineConfig().to_dict()


def test_yaml_file(tmp_path):
    path = write(tmp_path, "cfg.yaml", "seed: 9\nnegmix:\n  m: 0.25\n  p: null\nnoise:\n  window: 32\n")
    cfg = parse_config(path)
    assert cfg.seed == 9
    assert cfg.negmix.m == 0.25
    assert cfg.negmix.p is None
    assert cfg.noise.window == 32


def test_out_of_range_value_names_the_key(tmp_path):
    path = write(tmp_path, "cfg.json", json.dumps({"negmix": {"m": 1.5}}))
    with pytest.raises(ConfigError) as exc:
        parse_config(path)
    assert exc.value.field == "negmix.m"
    assert "negmix.m" in exc.value.message
    assert exc.value.exit_code == 2
    assert exc.value.qualified_code == "cli.config-error"


def test_precedence(tmp_path):
    path = write(tmp_path, "cfg.json", json.dumps({"seed": 3, "negmix": {"m": 0.1}}))
    assert parse_config(path).seed == 3
    assert parse_config(path, ["seed=4"]).seed == 4
    cfg = parse_config(path, ["seed=4", "negmix.m=0.2"], {"seed": 5, "negmix.m": None})
    assert cfg.seed == 5
    assert cfg.negmix.m == 0.2


@pytest.mark.parametrize("override, field", [
    ("negmix.q=1", "negmix.q"),
    ("colour=red", "colour"),
    ("loss.lam=0.1", "loss.lam"),
])
def test_unknown_keys(override, field):
    with pytest.raises(ConfigError) as exc:
        parse_config(overrides=[override])
    assert exc.value.field == field


def test_lambda_key():
    assert parse_config(overrides=["loss.lambda=0.2"]).loss.lam == 0.2
    assert parse_config().to_dict()["loss"]["lambda"] == 0.5


def test_stage_overrides():
    cfg = parse_config(overrides=['degradation.stages=[{"kind": "jpeg_sim", "range": [50, 60]}]'])
    assert len(cfg.degradation.stages) == 1
    assert cfg.degradation.template.stages[0].range == (50, 60)
    with pytest.raises(ConfigError):
        parse_config(overrides=['degradation.stages=[{"kind": "jpeg_sim", "range": [50, 60], "x": 1}]'])
    with pytest.raises(ConfigError) as exc:
        parse_config(overrides=['degradation.stages=[{"kind": "jpeg_sim", "range": [0, 60]}]'])
    assert exc.value.field.startswith("degradation")


def test_malformed_json_reports_line(tmp_path):
    path = write(tmp_path, "cfg.json", '{\n  "seed": 1,\n}\n')
    with pytest.raises(ConfigError) as exc:
        load_config_file(path)
    assert exc.value.line == 3
    assert "(line 3)" in exc.value.message


def test_malformed_yaml_reports_line(tmp_path):
    path = write(tmp_path, "cfg.yaml", "seed: 1\nnegmix:\n  m: [0.5\n")
    with pytest.raises(ConfigError) as exc:
        load_config_file(path)
    assert exc.value.line is not None


def test_missing_file(tmp_path):
    with pytest.raises(ConfigError):
        parse_config(str(tmp_path / "nope.yaml"))


@pytest.mark.parametrize("override, field", [
    ("seed=-1", "seed"),
    ("workers=0", "workers"),
    ("train.steps=0", "train.steps"),
    ("train.norm_mode=l1", "train.norm_mode"),
    ("train.flip=maybe", "train.flip"),
    ("noise.window=[0, 4]", "noise.window"),
    ("logging.level=LOUD", "logging.level"),
])
def test_invalid_values(override, field):
    with pytest.raises(ConfigError) as exc:
        parse_config(overrides=[override])
    assert exc.value.field == field


def test_override_parsing():
    assert parse_override("negmix.p=null") == {"negmix": {"p": None}}
    assert parse_override("noise.window=[8, 16]") == {"noise": {"window": [8, 16]}}
    with pytest.raises(ConfigError):
        parse_override("seed")


def test_setup_logging_writes_file(tmp_path):
    log_file = tmp_path / "logs" / "run.log"
    cfg = parse_config(overrides=[f"logging.file={log_file}", "logging.level=DEBUG"])
    setup_logging(cfg)
    logging.getLogger("negmix.test").debug("hello from the test")
    for handler in logging.getLogger().handlers:
        handler.flush()
    assert "hello from the test" in log_file.read_text()
    logging.basicConfig(level=logging.WARNING, force=True)
