"""Run configuration: one object holding every knob of a pipeline run.

Loaded from a named profile, optionally overlaid with a YAML/JSON file and
``section.key=value`` overrides. Unknown keys are rejected everywhere.
"""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml

from .datagen import GeneratorSpec
from .errors import ConfigError
from .model import ModelConfig
from .serializer import SYSTEM_PROMPT
from .trainer import TrainConfig

PROFILES: dict[str, dict[str, Any]] = {
    # seconds-scale smoke profile used by the test-suite and CLI examples
    "tiny": {
        "generator": {"n_jobs": 200},
        "model": {"d_model": 32, "n_layers": 1, "n_heads": 2, "d_ff": 64, "max_seq": 640},
        "train": {"batch_size": 4, "max_steps": 12, "epochs": 1.0, "max_seq_len": 640, "warmup_steps": 4, "eval_interval": 6, "ckpt_interval": 6, "val_subsample": 8},
        "eval": {"n_test": 10},
    },
    # ~2.1M parameters, 10k jobs
    "default": {
        "generator": {"n_jobs": 10000},
        "model": {"d_model": 192, "n_layers": 4, "n_heads": 6, "d_ff": 768, "max_seq": 640},
        "train": {"lr": 2e-3, "batch_size": 16, "epochs": 3.0, "max_seq_len": 640, "warmup_steps": 100, "eval_interval": 100, "ckpt_interval": 300},
        "eval": {"n_test": 1000},
    },
    # smaller model and data for the full-vs-sliding attention comparison
    "attention": {
        "generator": {"n_jobs": 4000},
        "model": {"d_model": 128, "n_layers": 2, "n_heads": 4, "d_ff": 512, "max_seq": 640},
        "train": {"lr": 2e-3, "batch_size": 16, "epochs": 3.0, "max_seq_len": 640, "warmup_steps": 50, "eval_interval": 100, "ckpt_interval": 100000},
        "eval": {"n_test": 400},
    },
    # informative fields pushed past the first 512 tokens by filler tags
    "long": {
        "generator": {"n_jobs": 3000, "filler_tags": 12},
        "model": {"d_model": 128, "n_layers": 2, "n_heads": 4, "d_ff": 512, "max_seq": 2048},
        "train": {"lr": 2e-3, "batch_size": 8, "epochs": 2.0, "max_seq_len": 2048, "warmup_steps": 50, "eval_interval": 100, "ckpt_interval": 100000},
        "eval": {"n_test": 300, "seq_lens": [512, 2048]},
    },
    # 36 days of jobs: a 10-day training period followed by five 5-day windows
    "temporal": {
        "generator": {"n_jobs": 10000, "span_days": 36},
        "model": {"d_model": 192, "n_layers": 4, "n_heads": 6, "d_ff": 768, "max_seq": 640},
        "train": {"lr": 2e-3, "batch_size": 16, "epochs": 3.0, "max_seq_len": 640, "warmup_steps": 100, "eval_interval": 100, "ckpt_interval": 100000},
        "eval": {"n_test": 300, "train_days": 10, "window_days": 5},
    },
}


@dataclass
class EvalConfig:
    n_test: int | None = None
    heuristic_window_days: float = 10
    seq_lens: list[int] = field(default_factory=lambda: [512, 1024, 2048])
    train_days: int = 10
    window_days: int = 5
    sliding_fraction: float = 0.25


@dataclass
class RunConfig:
    profile: str = "default"
    generator: GeneratorSpec = field(default_factory=GeneratorSpec)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    split_ratios: tuple[int, int, int] = (8, 1, 1)
    split_seed: int = 0
    system_prompt: str = SYSTEM_PROMPT

    def to_dict(self) -> dict:
        return {
            "profile": self.profile,
            "generator": self.generator.to_dict(),
            "model": self.model.to_dict(),
            "train": dict(vars(self.train)),
            "eval": dict(vars(self.eval)),
            "split_ratios": list(self.split_ratios),
            "split_seed": self.split_seed,
            "system_prompt": self.system_prompt,
        }

    def sha256(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode("utf-8")).hexdigest()

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        allowed = {"profile", "generator", "model", "train", "eval", "split_ratios", "split_seed", "system_prompt"}
        unknown = sorted(set(data) - allowed)
        if unknown:
            raise ConfigError(f"unknown config sections: {unknown}")
        ev = data.get("eval", {})
        bad = sorted(set(ev) - set(EvalConfig.__dataclass_fields__))
        if bad:
            raise ConfigError(f"unknown eval keys: {bad}")
        try:
            return cls(
                profile=data.get("profile", "custom"),
                generator=GeneratorSpec.from_dict(data.get("generator", {})),
                model=ModelConfig.from_dict(data.get("model", {})),
                train=TrainConfig.from_dict(data.get("train", {})),
                eval=EvalConfig(**ev),
                split_ratios=tuple(data.get("split_ratios", (8, 1, 1))),
                split_seed=int(data.get("split_seed", 0)),
                system_prompt=data.get("system_prompt", SYSTEM_PROMPT),
            )
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"invalid config value: {exc}") from exc


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict) and k != "lora":
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def _parse_override(item: str) -> tuple[list[str], Any]:
    if "=" not in item:
        raise ConfigError(f"override {item!r} is not key=value")
    key, raw = item.split("=", 1)
    try:
        value = yaml.safe_load(raw)
    except yaml.YAMLError as exc:
        raise ConfigError(f"bad value in override {item!r}: {exc}") from exc
    return key.strip().split("."), value


def load_run_config(
    profile: str | None = "default",
    path: str | Path | None = None,
    overrides: list[str] | None = None,
) -> RunConfig:
    data: dict[str, Any] = {}
    if profile is not None:
        if profile not in PROFILES:
            raise ConfigError(f"unknown profile {profile!r}; choose from {sorted(PROFILES)}")
        data = _merge({"profile": profile}, PROFILES[profile])
    if path is not None:
        try:
            loaded = yaml.safe_load(Path(path).read_text())
        except (OSError, yaml.YAMLError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(loaded, dict):
            raise ConfigError(f"config {path} must be a mapping")
        data = _merge(data, loaded)
    for item in overrides or []:
        keys, value = _parse_override(item)
        node = data
        for k in keys[:-1]:
            node = node.setdefault(k, {})
            if not isinstance(node, dict):
                raise ConfigError(f"override {item!r} descends into a non-mapping")
        node[keys[-1]] = value
    return RunConfig.from_dict(data)
