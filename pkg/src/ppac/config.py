"""Line-based key=value run configuration for training commands.

Unknown keys are hard errors that name the offending key, so typos in a
config file fail fast instead of silently training with defaults.
"""
from __future__ import annotations

from dataclasses import dataclass

from .adaptive_conv import NormalizationMode
from .networks import KINDS, TASKS


class ConfigError(ValueError):
    """Invalid configuration content; message names the offending key."""


@dataclass
class RunConfig:
    task: str = "flow"
    kind: str = "ppac"
    epochs: int = 100
    batch: int = 8
    base_lr: float = 5e-3
    lr_combination: float | None = None   # None: same rate as the branches
    halve_every: int = 0
    crop_h: int = 0                        # 0 disables cropping
    crop_w: int = 0
    seed: int = 0
    normalization_mode: str = "advanced"
    epsilon_denom: float | None = None     # None: dtype default
    data: str = ""                         # dataset directory (manifest inside)
    out_dir: str = "."
    val_count: int = 8

    def __post_init__(self):
        if self.task not in TASKS:
            raise ConfigError(f"task: must be one of {', '.join(TASKS)}")
        if self.kind not in KINDS:
            raise ConfigError(f"kind: must be one of {', '.join(KINDS)}")
        for key in ("epochs", "halve_every", "crop_h", "crop_w"):
            if getattr(self, key) < 0:
                raise ConfigError(f"{key}: must be >= 0")
        if self.batch < 1:
            raise ConfigError("batch: must be >= 1")
        if self.base_lr <= 0:
            raise ConfigError("base_lr: must be positive")
        if self.lr_combination is not None and self.lr_combination <= 0:
            raise ConfigError("lr_combination: must be positive")
        if self.epsilon_denom is not None and self.epsilon_denom <= 0:
            raise ConfigError("epsilon_denom: must be positive")
        if (self.crop_h > 0) != (self.crop_w > 0):
            raise ConfigError("crop_h/crop_w: set both or neither")
        if self.val_count < 0:
            raise ConfigError("val_count: must be >= 0")
        try:
            NormalizationMode(self.normalization_mode)
        except ValueError:
            raise ConfigError(
                f"normalization_mode: unknown value {self.normalization_mode!r}"
            ) from None

    @property
    def mode(self) -> NormalizationMode:
        return NormalizationMode(self.normalization_mode)

    @property
    def crop(self) -> tuple[int, int] | None:
        return (self.crop_h, self.crop_w) if self.crop_h else None


_PARSERS = {
    "task": str, "kind": str, "epochs": int, "batch": int,
    "base_lr": float, "lr_combination": float, "halve_every": int,
    "crop_h": int, "crop_w": int, "seed": int,
    "normalization_mode": str, "epsilon_denom": float,
    "data": str, "out_dir": str, "val_count": int,
}


def parse_config(text: str) -> RunConfig:
    """Parse key=value lines; blank lines and #-comments are skipped."""
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        if not sep:
            raise ConfigError(f"line {lineno}: expected key=value, got {raw!r}")
        if key not in _PARSERS:
            raise ConfigError(f"unknown key {key!r} (line {lineno})")
        if key in values:
            raise ConfigError(f"duplicate key {key!r} (line {lineno})")
        try:
            values[key] = _PARSERS[key](value)
        except ValueError:
            raise ConfigError(f"{key}: cannot parse {value!r} "
                              f"(line {lineno})") from None
    return RunConfig(**values)


def load_config(path) -> RunConfig:
    with open(path, encoding="utf-8") as f:
        return parse_config(f.read())
