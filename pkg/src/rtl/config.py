"""Flat ``key = value`` run configuration and labeled sub-seeds."""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any

import numpy as np

from .data import SynthConfig

TRAIN_MODES = ("base_only", "transfer_only", "rtl_reinforce", "rtl_actor_critic")
TASK_MAX_LEN = {"pi": 40, "nli": 50}
FORCE_CHOICES = ("none", "keep_all", "drop_all")


class ConfigError(ValueError):
    pass


@dataclass
class TrainConfig:
    episodes: int = 30
    batch_size: int = 32
    pretrain_iterations: int = 50
    lr_transfer: float = 0.001
    lr_policy: float = 0.02
    lr_value: float = 0.0  # 0: same as lr_policy
    gamma: float = 0.8
    mode: str = "rtl_actor_critic"
    seed: int = 0
    task: str = "pi"
    max_len: int = 0  # 0: use the task preset
    clip_norm: float = 5.0
    out_dir: str = ""
    hidden_size: int = 200
    embedding_dim: int = 300
    trainable_embeddings: bool = True
    policy_hidden: int = 128
    reward_subsample: int = 0  # 0: full validation set
    force: str = "none"
    greedy: bool = False

    @property
    def effective_max_len(self) -> int:
        return self.max_len or TASK_MAX_LEN[self.task]

    @property
    def value_lr(self) -> float:
        return self.lr_value or self.lr_policy

    @property
    def policy_mode(self) -> str | None:
        return {"rtl_reinforce": "reinforce", "rtl_actor_critic": "actor_critic"}.get(self.mode)

    def validate(self) -> None:
        if self.mode not in TRAIN_MODES:
            raise ConfigError(f"invalid mode {self.mode!r}; choose from {', '.join(TRAIN_MODES)}")
        if self.task not in TASK_MAX_LEN:
            raise ConfigError(f"invalid task {self.task!r}; choose pi or nli")
        if self.force not in FORCE_CHOICES:
            raise ConfigError(f"invalid selector.force {self.force!r}")
        if self.episodes < 1 or self.batch_size < 1 or self.pretrain_iterations < 0:
            raise ConfigError("need episodes >= 1, batch_size >= 1, pretrain_iterations >= 0")
        if self.lr_transfer <= 0 or self.lr_policy <= 0 or self.lr_value < 0:
            raise ConfigError("learning rates must be positive")
        if not 0.0 <= self.gamma <= 1.0:
            raise ConfigError("gamma must lie in [0, 1]")
        if self.hidden_size < 1 or self.embedding_dim < 1 or self.policy_hidden < 1:
            raise ConfigError("layer sizes must be positive")
        if self.max_len < 0 or self.reward_subsample < 0:
            raise ConfigError("max_len and selector.reward_subsample must be >= 0")


@dataclass
class DataConfig:
    source_train: str = ""
    target_train: str = ""
    target_val: str = ""
    target_test: str = ""
    embeddings: str = ""
    source_tags: str = ""


@dataclass
class Config:
    train: TrainConfig = field(default_factory=TrainConfig)
    data: DataConfig = field(default_factory=DataConfig)
    synth: SynthConfig = field(default_factory=SynthConfig)


# file key -> (section, field)
KEYS: dict[str, tuple[str, str]] = {}
for _f in fields(TrainConfig):
    KEYS[_f.name] = ("train", _f.name)
for _k, _f in {
    "hidden_size": "hidden_size",
    "embedding_dim": "embedding_dim",
    "trainable_embeddings": "trainable_embeddings",
}.items():
    del KEYS[_f]
    KEYS[f"model.{_k}"] = ("train", _f)
for _k, _f in {
    "hidden_size": "policy_hidden",
    "lr_value": "lr_value",
    "reward_subsample": "reward_subsample",
    "force": "force",
    "greedy": "greedy",
}.items():
    del KEYS[_f]
    KEYS[f"selector.{_k}"] = ("train", _f)
for _f in fields(DataConfig):
    KEYS[f"data.{_f.name}"] = ("data", _f.name)
for _f in fields(SynthConfig):
    KEYS[f"synth.{_f.name}"] = ("synth", _f.name)


def _convert(key: str, raw: str, like: Any) -> Any:
    raw = raw.strip()
    if len(raw) >= 2 and raw[0] == raw[-1] and raw[0] in "\"'":
        raw = raw[1:-1]
    try:
        if isinstance(like, bool):
            low = raw.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return low in ("true", "1", "yes")
        if isinstance(like, int):
            return int(raw)
        if isinstance(like, float):
            return float(raw)
    except ValueError:
        raise ConfigError(f"bad value for {key}: {raw!r}") from None
    return raw


def parse_assignments(lines: list[str], source: str = "<config>") -> dict[str, str]:
    out: dict[str, str] = {}
    for lineno, line in enumerate(lines, start=1):
        text = line.split("#", 1)[0].strip()
        if not text or (text.startswith("[") and text.endswith("]")):
            continue
        if "=" not in text:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        key, value = (s.strip() for s in text.split("=", 1))
        if key not in KEYS:
            raise ConfigError(f"unknown config key {key!r} ({source}:{lineno})")
        out[key] = value
    return out


def build_config(assignments: dict[str, str], base: Config | None = None) -> Config:
    cfg = base or Config()
    sections = {"train": cfg.train, "data": cfg.data, "synth": cfg.synth}
    updates: dict[str, dict[str, Any]] = {"train": {}, "data": {}, "synth": {}}
    for key, raw in assignments.items():
        if key not in KEYS:
            raise ConfigError(f"unknown config key {key!r}")
        section, name = KEYS[key]
        updates[section][name] = _convert(key, raw, getattr(sections[section], name))
    out = Config(
        replace(cfg.train, **updates["train"]),
        replace(cfg.data, **updates["data"]),
        replace(cfg.synth, **updates["synth"]),
    )
    out.train.validate()
    return out


def load_config(path: str | Path | None, overrides: dict[str, str] | None = None) -> Config:
    """Read a config file (optional) and apply ``overrides`` on top."""
    assignments: dict[str, str] = {}
    if path is not None:
        try:
            lines = Path(path).read_text(encoding="utf-8").splitlines()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        assignments.update(parse_assignments(lines, str(path)))
    for key, value in (overrides or {}).items():
        if key not in KEYS:
            raise ConfigError(f"unknown config key {key!r}")
        assignments[key] = str(value)
    return build_config(assignments)


def config_lines(cfg: Config) -> list[str]:
    """Every key with its effective value, sorted; the echo format."""
    sections = {"train": cfg.train, "data": cfg.data, "synth": cfg.synth}
    lines = []
    for key in sorted(KEYS):
        section, name = KEYS[key]
        value = getattr(sections[section], name)
        if isinstance(value, bool):
            value = str(value).lower()
        lines.append(f"{key} = {value}")
    return lines


def sub_seed(seed: int, label: str) -> int:
    digest = hashlib.sha256(f"{seed}/{label}".encode()).digest()
    return int.from_bytes(digest[:8], "little")


def rng_for(seed: int, label: str) -> np.random.Generator:
    """Independent generator per consumer, so adding a draw in one place
    leaves every other stream untouched."""
    return np.random.default_rng(sub_seed(seed, label))
