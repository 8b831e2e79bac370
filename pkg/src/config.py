"""Pipeline configuration: defaults, YAML/JSON files and command-line overrides.

Precedence, lowest first: dataclass defaults, the config file,
``--set section.key=value`` overrides, dedicated flags such as ``--seed``.
Unknown keys are rejected at every level.
"""

import dataclasses
import json
import logging
import os
from dataclasses import dataclass, field

import yaml

from src.degrade import ChainTemplate, OpSpec, RESIZE_METHODS, default_stages
from src.errors import ConfigError, InvalidArgumentError
from src.losses import LossWeights
from src.negmix import NegMixConfig
from src.noise_extract import NoiseThresholds
from src.toy_restorer import TrainConfig

DEFAULT_CONFIG_PATH = os.path.join("config", "config.yaml")
DEFAULT_LOG_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"
LOG_LEVELS = ("DEBUG", "INFO", "WARNING", "ERROR")


def _positive_pair(value, name):
    pair = [value, value] if isinstance(value, int) else list(value)
    if len(pair) != 2 or any(not isinstance(v, int) or v < 1 for v in pair):
        raise InvalidArgumentError(f"{name} must be a positive [h, w] pair, got {value}", field=name)
    return pair


@dataclass(frozen=True)
class PathsConfig:
    inputs: tuple = ()
    noise_bank: str = None
    output_dir: str = "output"

    def validate(self):
        for path in self.inputs:
            if not os.path.exists(path):
                raise InvalidArgumentError(f"input {path} does not exist", field="inputs")
        if self.noise_bank is not None and not os.path.exists(self.noise_bank):
            raise InvalidArgumentError(f"noise bank {self.noise_bank} does not exist",
                                       field="noise_bank")
        return self

    def to_dict(self):
        return {"inputs": list(self.inputs), "noise_bank": self.noise_bank,
                "output_dir": self.output_dir}


@dataclass(frozen=True)
class NoiseConfig:
    window: tuple = (64, 64)
    stride: tuple = None
    residual: bool = False
    sigma: float = 0.01
    mu: float = 0.05
    sigma_var: float = 1e-5
    sigma_mean: float = 1e-4

    @property
    def thresholds(self):
        return NoiseThresholds(self.sigma, self.mu, self.sigma_var, self.sigma_mean)

    def validate(self):
        _positive_pair(self.window, "window")
        if self.stride is not None:
            _positive_pair(self.stride, "stride")
        self.thresholds.validate()
        return self

    def to_dict(self):
        return {"window": _positive_pair(self.window, "window"),
                "stride": None if self.stride is None else _positive_pair(self.stride, "stride"),
                "residual": self.residual, **self.thresholds.to_dict()}


@dataclass(frozen=True)
class DegradationConfig:
    order: int = 1
    final_scale: float = 0.25
    final_method: str = "bicubic"
    stages: tuple = field(default_factory=default_stages)

    @property
    def template(self):
        return ChainTemplate(stages=tuple(self.stages), final_scale=self.final_scale,
                             final_method=self.final_method)

    def validate(self):
        if self.order not in (1, 2):
            raise InvalidArgumentError(f"order must be 1 or 2, got {self.order}", field="order")
        self.template.validate()
        return self

    def to_dict(self):
        return {
            "order": self.order,
            "final_scale": self.final_scale,
            "final_method": self.final_method,
            "stages": [
                {"kind": s.kind, "range": list(s.range), "methods": list(s.methods), "prob": s.prob}
                for s in self.stages
            ],
        }


@dataclass(frozen=True)
class LoggingConfig:
    level: str = "INFO"
    format: str = DEFAULT_LOG_FORMAT
    file: str = None

    def validate(self):
        if str(self.level).upper() not in LOG_LEVELS:
            raise InvalidArgumentError(f"level must be one of {LOG_LEVELS}, got {self.level!r}",
                                       field="level")
        return self

    def to_dict(self):
        return {"level": self.level, "format": self.format, "file": self.file}


# section name -> (dataclass, {config key: attribute})
SECTIONS = {
    "paths": (PathsConfig, {}),
    "noise": (NoiseConfig, {}),
    "degradation": (DegradationConfig, {}),
    "negmix": (NegMixConfig, {}),
    "loss": (LossWeights, {"lambda": "lam"}),
    "train": (TrainConfig, {}),
    "logging": (LoggingConfig, {}),
}


@dataclass(frozen=True)
class PipelineConfig:
    seed: int = 0
    workers: int = 1
    paths: PathsConfig = field(default_factory=PathsConfig)
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    degradation: DegradationConfig = field(default_factory=DegradationConfig)
    negmix: NegMixConfig = field(default_factory=NegMixConfig)
    loss: LossWeights = field(default_factory=LossWeights)
    train: TrainConfig = field(default_factory=TrainConfig)
    logging: LoggingConfig = field(default_factory=LoggingConfig)

    def validate(self):
        if not isinstance(self.seed, int) or self.seed < 0:
            raise ConfigError(f"seed must be a non-negative integer, got {self.seed!r}", field="seed")
        if not isinstance(self.workers, int) or self.workers < 1:
            raise ConfigError(f"workers must be >= 1, got {self.workers!r}", field="workers")
        for name in SECTIONS:
            section = getattr(self, name)
            try:
                section.validate()
            except InvalidArgumentError as e:
                dotted = f"{name}.{e.field}" if e.field else name
                raise ConfigError(f"{dotted}: {e.message}", field=dotted)
            except (TypeError, ValueError) as e:
                raise ConfigError(f"{name}: {e}", field=name)
        return self

    def to_dict(self):
        out = {"seed": self.seed, "workers": self.workers}
        for name in SECTIONS:
            out[name] = getattr(self, name).to_dict()
        return out


def _stage(data, path):
    if not isinstance(data, dict):
        raise ConfigError(f"{path} must be a mapping", field=path)
    allowed = {"kind", "range", "methods", "prob"}
    unknown = set(data) - allowed
    if unknown:
        raise ConfigError(f"unknown key {path}.{sorted(unknown)[0]}", field=f"{path}.{sorted(unknown)[0]}")
    if "kind" not in data or "range" not in data:
        raise ConfigError(f"{path} needs 'kind' and 'range'", field=path)
    return OpSpec(
        kind=data["kind"],
        range=tuple(data["range"]),
        methods=tuple(data.get("methods", RESIZE_METHODS)),
        prob=data.get("prob", 1.0),
    )


def _tuple_fields(value):
    return tuple(value) if isinstance(value, list) else value


def _build_section(name, base, data):
    cls, renames = SECTIONS[name]
    if not isinstance(data, dict):
        raise ConfigError(f"section {name} must be a mapping", field=name)
    names = {f.name for f in dataclasses.fields(cls)}
    changes = {}
    for key, value in data.items():
        attr = renames.get(key, key)
        if attr not in names or key in set(renames.values()):
            raise ConfigError(f"unknown key {name}.{key}", field=f"{name}.{key}")
        if name == "degradation" and attr == "stages":
            value = tuple(_stage(s, f"degradation.stages[{i}]") for i, s in enumerate(value or []))
        else:
            value = _tuple_fields(value)
        changes[attr] = value
    return dataclasses.replace(base, **changes)


def merge(cfg, data):
    """Apply a nested mapping on top of ``cfg``"""
    if data is None:
        return cfg
    if not isinstance(data, dict):
        raise ConfigError("configuration root must be a mapping")
    changes = {}
    for key, value in data.items():
        if key in ("seed", "workers"):
            changes[key] = value
        elif key in SECTIONS:
            changes[key] = _build_section(key, getattr(cfg, key), value)
        else:
            raise ConfigError(f"unknown key {key}", field=key)
    return dataclasses.replace(cfg, **changes)


def load_config_file(path):
    """Parse a YAML or JSON config file into a plain mapping"""
    try:
        with open(path, "r", encoding="utf-8") as f:
            text = f.read()
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}")
    if path.endswith(".json"):
        try:
            return json.loads(text) if text.strip() else {}
        except json.JSONDecodeError as e:
            raise ConfigError(f"malformed JSON in {path}: {e.msg}", line=e.lineno)
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as e:
        mark = getattr(e, "problem_mark", None)
        raise ConfigError(f"malformed YAML in {path}: {getattr(e, 'problem', e)}",
                          line=mark.line + 1 if mark is not None else None)
    return data or {}


def parse_override(text):
    """``section.key=value`` -> nested mapping; the value is parsed as YAML"""
    if "=" not in text:
        raise ConfigError(f"override {text!r} is not of the form key=value")
    key, raw = text.split("=", 1)
    parts = [p for p in key.strip().split(".") if p]
    if not parts:
        raise ConfigError(f"override {text!r} has an empty key")
    try:
        value = yaml.safe_load(raw)
    except yaml.YAMLError:
        value = raw
    data = value
    for part in reversed(parts):
        data = {part: data}
    return data


def parse_config(path=None, overrides=(), flags=None):
    """Build the effective PipelineConfig.

    ``overrides`` are ``section.key=value`` strings; ``flags`` maps dotted
    keys to values from dedicated command-line options (None means unset).
    """
    cfg = PipelineConfig()
    if path is not None:
        cfg = merge(cfg, load_config_file(path))
    for text in overrides:
        cfg = merge(cfg, parse_override(text))
    for key, value in (flags or {}).items():
        if value is not None:
            cfg = merge(cfg, _nested(key, value))
    return cfg.validate()


def _nested(key, value):
    data = value
    for part in reversed(key.split(".")):
        data = {part: data}
    return data


def setup_logging(cfg):
    """Setup logging configuration"""
    log_cfg = cfg.logging if isinstance(cfg, PipelineConfig) else cfg
    handlers = [logging.StreamHandler()]
    if log_cfg.file:
        directory = os.path.dirname(log_cfg.file)
        if directory:
            os.makedirs(directory, exist_ok=True)
        handlers.append(logging.FileHandler(log_cfg.file))
    logging.basicConfig(
        level=getattr(logging, str(log_cfg.level).upper()),
        format=log_cfg.format,
        handlers=handlers,
        force=True,
    )
