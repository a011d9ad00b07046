"""Run configuration: dataclasses plus the flat key-value config file format.

Config files are plain text, one `dotted.key = value` per line, values
parsed as JSON scalars (bare words fall back to strings). CLI flags override
file values; every field below is addressable.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Optional

from .adapters import SoloConfig
from .errors import ConfigError
from .model import ModelConfig
from .tasks import TaskSpec

TUNING_MODES = ("full_ft", "frozen", "solo", "lora")


@dataclass
class LoraParams:
    rank: int = 4
    alpha: float = 32.0

    def __post_init__(self):
        if self.rank < 1:
            raise ConfigError(f"lora rank must be >= 1, got {self.rank}")


@dataclass
class OptimConfig:
    learning_rate: float = 1e-3
    weight_decay: float = 0.1
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 4
    steps: int = 1000
    warmup_steps: int = 0
    stop_eval_loss: Optional[float] = None

    def __post_init__(self):
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.steps < 0:
            raise ConfigError(f"steps must be >= 0, got {self.steps}")


@dataclass
class EvalConfig:
    interval: int = 250
    size: int = 64

    def __post_init__(self):
        if self.interval < 1:
            raise ConfigError(f"eval interval must be >= 1, got {self.interval}")
        if self.size < 1:
            raise ConfigError(f"eval size must be >= 1, got {self.size}")


@dataclass
class RunConfig:
    mode: str = "solo"
    seed: int = 0
    model: ModelConfig = field(default_factory=lambda: ModelConfig(
        vocab_size=16, d_model=64, n_layers=12, n_heads=4, d_ff=256, max_seq_len=64))
    solo: SoloConfig = field(default_factory=lambda: SoloConfig(rank=16, sparsity=0.6))
    lora: LoraParams = field(default_factory=LoraParams)
    optim: OptimConfig = field(default_factory=OptimConfig)
    task: TaskSpec = field(default_factory=lambda: TaskSpec(kind="reverse"))
    eval: EvalConfig = field(default_factory=EvalConfig)

    def __post_init__(self):
        if self.mode not in TUNING_MODES:
            raise ConfigError(f"mode must be one of {TUNING_MODES}, got {self.mode!r}")
        if self.task.required_vocab > self.model.vocab_size:
            raise ConfigError(
                f"task needs vocab >= {self.task.required_vocab}, model has {self.model.vocab_size}"
            )
        if self.task.seq_len > self.model.max_seq_len:
            raise ConfigError(
                f"task sequence length {self.task.seq_len} exceeds max_seq_len {self.model.max_seq_len}"
            )

    def to_flat(self) -> dict[str, Any]:
        flat: dict[str, Any] = {"mode": self.mode, "seed": self.seed}
        for section in ("model", "solo", "lora", "optim", "task", "eval"):
            for key, value in asdict(getattr(self, section)).items():
                flat[f"{section}.{key}"] = value
        return flat


_SECTIONS = {
    "model": ModelConfig,
    "solo": SoloConfig,
    "lora": LoraParams,
    "optim": OptimConfig,
    "task": TaskSpec,
    "eval": EvalConfig,
}

_SECTION_FIELDS = {
    name: set(cls.__dataclass_fields__) for name, cls in _SECTIONS.items()
}


def parse_value(text: str) -> Any:
    text = text.strip()
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def parse_config_file(path) -> dict[str, Any]:
    """Read `key = value` lines into a flat mapping. '#' starts a comment."""
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {p}")
    flat: dict[str, Any] = {}
    for lineno, raw in enumerate(p.read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{p}:{lineno}: expected 'key = value', got {raw!r}")
        key, value = line.split("=", 1)
        flat[key.strip()] = parse_value(value)
    return flat


def run_config_from_flat(flat: dict[str, Any]) -> RunConfig:
    """Build a RunConfig, rejecting unknown keys by name."""
    sections: dict[str, dict[str, Any]] = {name: {} for name in _SECTIONS}
    top: dict[str, Any] = {}
    for key, value in flat.items():
        if "." in key:
            section, fieldname = key.split(".", 1)
            if section not in _SECTIONS or fieldname not in _SECTION_FIELDS[section]:
                raise ConfigError(f"unknown config key: {key!r}")
            sections[section][fieldname] = value
        elif key in ("mode", "seed"):
            top[key] = value
        else:
            raise ConfigError(f"unknown config key: {key!r}")

    # task.kind is required before TaskSpec can be built with overrides
    kwargs: dict[str, Any] = dict(top)
    for name, cls in _SECTIONS.items():
        overrides = sections[name]
        if overrides:
            if name == "task" and "kind" not in overrides:
                overrides = {"kind": "reverse", **overrides}
            try:
                kwargs[name] = cls(**overrides)
            except TypeError as exc:
                raise ConfigError(f"bad {name} config: {exc}") from exc
    try:
        return RunConfig(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"bad run config: {exc}") from exc


def run_config_from_nested(nested: dict[str, Any]) -> RunConfig:
    """Build a RunConfig from a nested mapping (service request bodies)."""
    flat: dict[str, Any] = {}
    for key, value in nested.items():
        if isinstance(value, dict):
            for sub, v in value.items():
                if v is not None:
                    flat[f"{key}.{sub}"] = v
        elif value is not None:
            flat[key] = value
    return run_config_from_flat(flat)


def apply_overrides(flat: dict[str, Any], pairs: dict[str, Any]) -> dict[str, Any]:
    merged = dict(flat)
    for key, value in pairs.items():
        if value is not None:
            merged[key] = value
    return merged


def nest_flat(flat: dict[str, Any]) -> dict[str, Any]:
    """Turn dotted keys into a nested mapping (service request body shape)."""
    nested: dict[str, Any] = {}
    for key, value in flat.items():
        if "." in key:
            section, fieldname = key.split(".", 1)
            nested.setdefault(section, {})[fieldname] = value
        else:
            nested[key] = value
    return nested
