"""Single config document covering every tunable block.

Example (YAML)::

    mel: {n_mels: 64, fft_size: 512}
    augment: {snr_range_db: [-10, 30]}
    loss: {temperature: 0.1}
    ramp: {max_alpha: 0.5}
    train: {batch_size: 128, epochs: 100}
    model: {arch: conv_residual}
    eval: {snrs_db: [-10, -5, 0, 20]}

Unknown sections or keys raise ``ConfigError``.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml

from .dsp import AugmentPolicy, MelConfig
from .i2cr import LossConfig, RampSchedule
from .model import EncoderConfig
from .train import TrainConfig


class ConfigError(ValueError):
    pass


@dataclass
class EvalConfig:
    snrs_db: list[float] = field(default_factory=lambda: [-10.0, -5.0, 0.0, 20.0])
    seed: int = 0
    split: str = "test"
    include_clean: bool = True
    batch_size: int = 256
    category_map: dict[str, str] = field(default_factory=dict)


@dataclass
class Config:
    mel: MelConfig = field(default_factory=MelConfig)
    augment: AugmentPolicy = field(default_factory=AugmentPolicy)
    loss: LossConfig = field(default_factory=LossConfig)
    ramp: RampSchedule = field(default_factory=RampSchedule)
    train: TrainConfig = field(default_factory=TrainConfig)
    model: EncoderConfig = field(default_factory=EncoderConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)


_TYPES = {
    "mel": MelConfig, "augment": AugmentPolicy, "loss": LossConfig, "ramp": RampSchedule,
    "train": TrainConfig, "model": EncoderConfig, "eval": EvalConfig,
}


def _build(cls, values: dict[str, Any], section: str):
    if not isinstance(values, dict):
        raise ConfigError(f"section {section!r} must be a mapping")
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(values) - known)
    if unknown:
        raise ConfigError(f"unknown key(s) in {section!r}: {', '.join(unknown)}")
    try:
        return cls(**values)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid {section!r} section: {exc}") from exc


def config_from_dict(data: dict[str, Any] | None) -> Config:
    data = data or {}
    unknown = sorted(set(data) - set(_TYPES))
    if unknown:
        raise ConfigError(f"unknown config section(s): {', '.join(unknown)}")
    return Config(**{name: _build(cls, data.get(name, {}) or {}, name) for name, cls in _TYPES.items()})


def load_config(path: str | Path | None) -> Config:
    if path is None:
        return Config()
    try:
        data = yaml.safe_load(Path(path).read_text(encoding="utf-8"))
    except (OSError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return config_from_dict(data)


def override(cfg: Config, section: str, **values) -> Config:
    """Return a copy of ``cfg`` with keys in one section replaced (None values are ignored)."""
    current = dataclasses.asdict(getattr(cfg, section))
    current.update({k: v for k, v in values.items() if v is not None})
    return dataclasses.replace(cfg, **{section: _build(_TYPES[section], current, section)})


def dump_config(cfg: Config, path: str | Path) -> None:
    def plain(x):
        if isinstance(x, tuple):
            return [plain(v) for v in x]
        if isinstance(x, dict):
            return {k: plain(v) for k, v in x.items()}
        if isinstance(x, list):
            return [plain(v) for v in x]
        return x

    Path(path).write_text(yaml.safe_dump(plain(cfg.to_dict()), sort_keys=False), encoding="utf-8")
