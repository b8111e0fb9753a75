"""Run configuration and the flat ``key = value`` config file format.

A config file holds one ``section.field = value`` assignment per line; ``#``
starts a comment. Sections are ``audio``, ``model``, ``mask``, ``loss`` and
``train``; fields are the dataclass attributes below. Values are parsed as
bool (``true``/``false``), ``none``, int, float, then bare string::

    train.seed = 3
    audio.target_seconds = 1.28
    mask.strategy = 2d
    loss.symmetric = false
"""

from __future__ import annotations

import dataclasses
import math
import os
from dataclasses import dataclass, field
from typing import Any


class ConfigError(ValueError):
    pass


@dataclass
class AudioConfig:
    sample_rate: int = 16000
    n_mels: int = 128
    win_ms: float = 25.0
    hop_ms: float = 10.0
    n_fft: int = 1024
    log_floor: float = 1e-10
    norm_mean: float = 0.0  # features become (log-mel - norm_mean) / norm_std
    norm_std: float = 1.0
    target_seconds: float = 10.0
    patch_time: int = 16
    patch_freq: int = 16
    spec_augment: bool = True
    time_mask_max: int = 192
    freq_mask_max: int = 48
    fusion: bool = False
    fusion_local_views: int = 3

    @property
    def win_length(self) -> int:
        return int(round(self.sample_rate * self.win_ms / 1000))

    @property
    def hop_length(self) -> int:
        return int(round(self.sample_rate * self.hop_ms / 1000))

    @property
    def target_samples(self) -> int:
        return int(round(self.target_seconds * self.sample_rate))

    @property
    def target_frames(self) -> int:
        """Frame count of a ``target_seconds`` waveform (998 for 10 s at 16 kHz)."""
        return (self.target_samples - self.win_length) // self.hop_length + 1

    @property
    def grid(self) -> tuple[int, int]:
        return math.ceil(self.target_frames / self.patch_time), self.n_mels // self.patch_freq

    @property
    def num_patches(self) -> int:
        gt, gf = self.grid
        return gt * gf

    @property
    def patch_dim(self) -> int:
        return self.patch_time * self.patch_freq


@dataclass
class ModelConfig:
    width: int = 128
    depth: int = 4
    heads: int = 4
    mlp_ratio: float = 4.0
    text_width: int = 128
    text_depth: int = 2
    text_heads: int = 4
    shared_dim: int = 64
    max_text_len: int = 77
    decoder_width: int = 512
    decoder_depth: int = 4
    decoder_heads: int = 4
    init_std: float = 0.02

    def validate(self) -> None:
        for name, d, h in (
            ("width", self.width, self.heads),
            ("text_width", self.text_width, self.text_heads),
            ("decoder_width", self.decoder_width, self.decoder_heads),
        ):
            if d % h:
                raise ConfigError(f"model.{name}={d} is not divisible by its head count {h}")
        if self.decoder_width % 4:
            raise ConfigError("model.decoder_width must be divisible by 4 for 2-D sinusoidal positions")


@dataclass
class MaskConfig:
    strategy: str = "none"  # none | 1d | 2d
    ratio: float = 0.4  # 1d
    group_ratio: float = 0.2  # 2d, over M groups
    frame_ratio: float = 0.2  # 2d, over K frames per group
    groups: int | None = None  # 2d group count M; None -> time patches of the grid

    def validate(self) -> None:
        if self.strategy not in ("none", "1d", "2d"):
            raise ConfigError(f"unknown mask.strategy {self.strategy!r}")
        for name in ("ratio", "group_ratio", "frame_ratio"):
            value = getattr(self, name)
            if not 0.0 <= value < 1.0:
                raise ConfigError(f"mask.{name}={value} must lie in [0, 1)")


@dataclass
class LossConfig:
    symmetric: bool = True
    temperature_init: float = 0.07
    temperature_min: float = 0.01
    learn_temperature: bool = True
    reconstruction_weight: float = 1.0

    def validate(self) -> None:
        if self.temperature_init <= 0 or self.temperature_min <= 0:
            raise ConfigError("temperatures must be positive")
        if self.reconstruction_weight < 0:
            raise ConfigError("loss.reconstruction_weight must be non-negative")


@dataclass
class TrainConfig:
    seed: int = 0
    batch_size: int = 16
    epochs: int = 45
    max_steps: int | None = None
    peak_lr: float = 1e-4
    warmup_steps: int | None = None  # None -> 5% of total steps
    beta1: float = 0.99
    beta2: float = 0.9
    adam_eps: float = 1e-8
    grad_clip: float | None = None
    checkpoint_dir: str | None = None
    log_path: str | None = None
    keep_checkpoints: int = 2


@dataclass
class Config:
    audio: AudioConfig = field(default_factory=AudioConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    mask: MaskConfig = field(default_factory=MaskConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    train: TrainConfig = field(default_factory=TrainConfig)

    def validate(self) -> "Config":
        self.model.validate()
        self.mask.validate()
        self.loss.validate()
        if self.audio.n_mels % self.audio.patch_freq:
            raise ConfigError("audio.n_mels must be divisible by audio.patch_freq")
        return self

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)

    def dumps(self) -> str:
        lines = []
        for section, values in self.to_dict().items():
            for key, value in values.items():
                lines.append(f"{section}.{key} = {_format(value)}")
        return "\n".join(lines) + "\n"


def _format(value: Any) -> str:
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    return str(value)


def _parse_value(raw: str) -> Any:
    low = raw.lower()
    if low in ("true", "false"):
        return low == "true"
    if low in ("none", "null", ""):
        return None
    for cast in (int, float):
        try:
            return cast(raw)
        except ValueError:
            pass
    return raw


def _coerce(section: str, key: str, target: Any, value: Any) -> Any:
    spec = {f.name: f for f in dataclasses.fields(target)}
    if key not in spec:
        raise ConfigError(f"unknown config key {section}.{key}")
    annotation = str(spec[key].type)
    if value is None:
        if "None" not in annotation:
            raise ConfigError(f"{section}.{key} may not be none")
        return value
    if annotation.startswith("bool"):
        if not isinstance(value, bool):
            raise ConfigError(f"{section}.{key} expects true/false, got {value!r}")
        return value
    if annotation.startswith("float") and isinstance(value, int) and not isinstance(value, bool):
        return float(value)
    numeric = annotation.startswith(("int", "float"))
    if numeric and (isinstance(value, bool) or not isinstance(value, (int, float))):
        raise ConfigError(f"{section}.{key} expects a number, got {value!r}")
    return value


def apply_overrides(config: Config, items: dict[str, Any]) -> Config:
    for dotted, value in items.items():
        section, _, key = dotted.partition(".")
        target = getattr(config, section, None)
        if not key or not dataclasses.is_dataclass(target):
            raise ConfigError(f"config keys must look like section.field, got {dotted!r}")
        if isinstance(value, str):
            parsed = _parse_value(value)
            # string-typed fields keep literals such as "none" verbatim
            value = value if isinstance(getattr(target, key, None), str) and not isinstance(parsed, str) else parsed
        setattr(target, key, _coerce(section, key, target, value))
    return config.validate()


def parse_config(text: str, base: Config | None = None) -> Config:
    items: dict[str, Any] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, _, value = line.partition("=")
        items[key.strip()] = value.strip()
    return apply_overrides(base or Config(), items)


def load_config(path: str | os.PathLike | None) -> Config:
    if path is None:
        return Config().validate()
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read())
