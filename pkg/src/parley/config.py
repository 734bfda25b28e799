"""Run configuration: defaults, JSON config files, and command-line overrides.

Precedence is defaults < file values < ``--set section.key=value`` flags.
The model's vocabulary size is always derived from the actual vocabulary at
training time, so it is not part of the configurable model section.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field

from .decoding import DecodeConfig
from .errors import ConfigError
from .model import ModelConfig


@dataclass
class TrainSettings:
    learning_rate: float = 0.05
    warmup_steps: int = 100
    epochs: int = 20
    max_steps: int = 0  # 0 means no step cap
    batch_token_budget: int = 512
    seed: int = 13
    span_len: int = 3
    mask_rate: float = 0.15
    short_context_threshold: int = 64
    min_freq: int = 1
    max_vocab_size: int = 8000

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ConfigError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if not 0.0 < self.mask_rate < 1.0:
            raise ConfigError(f"mask_rate must lie in (0, 1), got {self.mask_rate}")


@dataclass
class DataPaths:
    train: str = ""
    valid: str = ""
    vocab: str = ""
    checkpoint_out: str = "checkpoint.json"


@dataclass
class RunConfig:
    model: dict = field(default_factory=dict)
    train: TrainSettings = field(default_factory=TrainSettings)
    data: DataPaths = field(default_factory=DataPaths)
    decode: DecodeConfig = field(default_factory=DecodeConfig)

    def model_config(self, vocab_size: int) -> ModelConfig:
        return ModelConfig(vocab_size=vocab_size, **self.model)


_MODEL_KEYS = {f.name for f in dataclasses.fields(ModelConfig)} - {"vocab_size"}
_SECTION_KEYS = {
    "model": _MODEL_KEYS,
    "train": {f.name for f in dataclasses.fields(TrainSettings)},
    "data": {f.name for f in dataclasses.fields(DataPaths)},
    "decode": {f.name for f in dataclasses.fields(DecodeConfig)},
}


def _check_section(section: str, values: dict):
    if section not in _SECTION_KEYS:
        raise ConfigError(f"unknown config section {section!r}; "
                          f"expected one of {sorted(_SECTION_KEYS)}")
    unknown = set(values) - _SECTION_KEYS[section]
    if unknown:
        raise ConfigError(f"unknown key(s) {sorted(unknown)} in section {section!r}; "
                          f"valid keys: {sorted(_SECTION_KEYS[section])}")


def load_config_file(path: str) -> dict:
    with open(path, encoding="utf-8") as fh:
        try:
            raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON: {exc.msg} (line {exc.lineno})") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: config root must be a JSON object")
    for section, values in raw.items():
        if not isinstance(values, dict):
            raise ConfigError(f"{path}: section {section!r} must be a JSON object")
        _check_section(section, values)
    return raw


def parse_override(text: str) -> tuple[str, str, object]:
    """Parse one ``section.key=value`` flag; values read as JSON when possible."""
    if "=" not in text:
        raise ConfigError(f"override {text!r} must look like section.key=value")
    dotted, raw_value = text.split("=", 1)
    if dotted.count(".") != 1:
        raise ConfigError(f"override key {dotted!r} must look like section.key")
    section, key = dotted.split(".")
    _check_section(section, {key: None})
    try:
        value = json.loads(raw_value)
    except json.JSONDecodeError:
        value = raw_value
    return section, key, value


def make_run_config(path: str | None = None, overrides: tuple[str, ...] = ()) -> RunConfig:
    merged: dict = {"model": {}, "train": {}, "data": {}, "decode": {}}
    if path:
        for section, values in load_config_file(path).items():
            merged[section].update(values)
    for text in overrides:
        section, key, value = parse_override(text)
        merged[section][key] = value
    try:
        return RunConfig(
            model=merged["model"],
            train=TrainSettings(**merged["train"]),
            data=DataPaths(**merged["data"]),
            decode=DecodeConfig(**merged["decode"]),
        )
    except TypeError as exc:
        raise ConfigError(f"invalid configuration: {exc}") from exc
