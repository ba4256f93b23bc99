"""Run configuration: JSON files with strict validation and full-default dumps."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field, fields

from .losses import LossConfig
from .model import ModelConfig
from .training import TrainConfig

__all__ = ["ConfigError", "RunConfig", "load_run_config", "run_config_to_dict"]

OUT_ROOT_ENV = "DISPLAB_OUT_ROOT"


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    corpus: str = ""
    out_dir: str = "run"
    n_sequences: int = 100
    trace_len: int = 64
    snapshot_every: int = 500
    bins: int = 101
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)

    def validate(self) -> "RunConfig":
        if self.n_sequences < 1:
            raise ConfigError("n_sequences must be >= 1")
        if self.trace_len < 2:
            raise ConfigError("trace_len must be >= 2")
        if self.snapshot_every < 0:
            raise ConfigError("snapshot_every must be >= 0")
        if self.bins < 2:
            raise ConfigError("bins must be >= 2")
        try:
            self.model.validate()
            self.train.validate()
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        if self.trace_len > self.model.context_len:
            raise ConfigError("trace_len cannot exceed context_len")
        return self

    def resolved_out_dir(self) -> str:
        root = os.environ.get(OUT_ROOT_ENV, "")
        if root and not os.path.isabs(self.out_dir):
            return os.path.join(root, self.out_dir)
        return self.out_dir


def _build(cls, section: dict, where: str):
    allowed = {f.name for f in fields(cls)}
    unknown = set(section) - allowed
    if unknown:
        raise ConfigError(f"unknown {where} option(s): {', '.join(sorted(unknown))}")
    try:
        return cls(**section)
    except TypeError as exc:
        raise ConfigError(f"bad {where} section: {exc}") from exc


def run_config_from_dict(data: dict) -> RunConfig:
    if not isinstance(data, dict):
        raise ConfigError("config root must be a JSON object")
    data = dict(data)
    model = _build(ModelConfig, data.pop("model", {}), "model")
    loss = _build(LossConfig, data.pop("loss", {}), "loss")
    train_section = dict(data.pop("train", {}))
    if "loss" in train_section:
        raise ConfigError("loss options live in the top-level 'loss' section")
    train = _build(TrainConfig, train_section, "train")
    train.loss = loss
    allowed = {f.name for f in fields(RunConfig)} - {"model", "train"}
    unknown = set(data) - allowed
    if unknown:
        raise ConfigError(f"unknown option(s): {', '.join(sorted(unknown))}")
    cfg = RunConfig(model=model, train=train, **data)
    return cfg.validate()


def load_run_config(path) -> RunConfig:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            data = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    return run_config_from_dict(data)


def run_config_to_dict(cfg: RunConfig) -> dict:
    loss = cfg.train.loss
    return {
        "corpus": cfg.corpus,
        "out_dir": cfg.out_dir,
        "n_sequences": cfg.n_sequences,
        "trace_len": cfg.trace_len,
        "snapshot_every": cfg.snapshot_every,
        "bins": cfg.bins,
        "model": {f.name: getattr(cfg.model, f.name) for f in fields(ModelConfig)},
        "train": {f.name: getattr(cfg.train, f.name) for f in fields(TrainConfig)
                  if f.name != "loss"},
        "loss": {f.name: getattr(loss, f.name) for f in fields(LossConfig)},
    }
