"""Plain-text ``key = value`` configuration and the built-in presets.

Blank lines and ``#`` comments are ignored.  Lists are comma separated.
Recognised keys (all optional)::

    preset            desk | paper | micro        (applied first, then overridden)
    stages            backbone stage count L
    widths            per-stage channel widths, e.g. 16,32,64,64
    stem_width        channels of the full-resolution stem convolution
    tapped            1-based stage indices feeding both branches, e.g. 2,3,4
    T                 regions per tapped stage
    r                 channel-attention reduction rate
    scale             fixed region scale s_h = s_w
    branch_width      channels per inception branch
    global_dim        width of the fused global feature
    local_dim         width of the fused local feature
    classes           number of classes K
    resolution        square input size R
    residual_attention  gate features by x*(1+A) instead of x*A
    gamma1, gamma2    loss balance weights
    batch_size, lr, momentum, decay_epoch, decay_factor, epochs, seed
    mean, std         per-channel standardisation constants (3 values or 1)
    flip              random horizontal flips during training
    checkpoint_every  epochs between periodic checkpoints
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Tuple

from .errors import ConfigError


@dataclass
class ModelConfig:
    stages: int = 4
    widths: Tuple[int, ...] = (16, 32, 64, 64)
    stem_width: int = 16
    tapped: Tuple[int, ...] = (2, 3, 4)
    regions: int = 4
    reduction: int = 16
    scale: float = 0.5
    branch_width: int = 8
    global_dim: int = 64
    local_dim: int = 64
    classes: int = 4
    resolution: int = 32
    residual_attention: bool = False

    def validate(self) -> "ModelConfig":
        if self.stages < 2:
            raise ConfigError(f"stages must be >= 2, got {self.stages}")
        if len(self.widths) != self.stages:
            raise ConfigError(f"{len(self.widths)} widths given for {self.stages} stages")
        if any(w < 1 for w in self.widths) or self.stem_width < 1:
            raise ConfigError("widths must be positive")
        if not self.tapped or any(not 1 <= s <= self.stages for s in self.tapped):
            raise ConfigError(f"tapped stages {self.tapped} must lie in 1..{self.stages}")
        if len(set(self.tapped)) != len(self.tapped):
            raise ConfigError(f"tapped stages {self.tapped} repeat")
        for s in self.tapped:
            if self.widths[s - 1] % self.reduction:
                raise ConfigError(f"r={self.reduction} does not divide width {self.widths[s - 1]} of stage {s}")
        if self.regions < 1 or self.classes < 1 or self.branch_width < 1:
            raise ConfigError("T, classes and branch_width must be positive")
        if self.global_dim < 1 or self.local_dim < 1:
            raise ConfigError("feature dimensions must be positive")
        if not 0 < self.scale <= 1:
            raise ConfigError(f"scale must lie in (0, 1], got {self.scale}")
        if self.resolution % (2 ** self.stages):
            raise ConfigError(f"resolution {self.resolution} not divisible by 2^{self.stages}")
        return self


@dataclass
class TrainConfig:
    batch_size: int = 16
    lr: float = 1e-2
    momentum: float = 0.9
    decay_epoch: int = 10
    decay_factor: float = 0.1
    epochs: int = 30
    seed: int = 0
    gamma1: float = 0.5
    gamma2: float = 0.5
    mean: Tuple[float, ...] = (0.5, 0.5, 0.5)
    std: Tuple[float, ...] = (0.25, 0.25, 0.25)
    flip: bool = False
    checkpoint_every: int = 1

    def validate(self) -> "TrainConfig":
        if self.batch_size < 1 or self.epochs < 0 or self.decay_epoch < 1 or self.checkpoint_every < 1:
            raise ConfigError("batch_size, decay_epoch and checkpoint_every must be positive")
        if self.lr < 0:
            raise ConfigError("lr must be nonnegative")
        if not 0 <= self.momentum < 1:
            raise ConfigError(f"momentum must lie in [0, 1), got {self.momentum}")
        if self.gamma1 < 0 or self.gamma2 < 0:
            raise ConfigError("gamma1 and gamma2 must be nonnegative")
        if len(self.mean) != 3 or len(self.std) != 3 or any(s <= 0 for s in self.std):
            raise ConfigError("mean/std need 3 values and std must be positive")
        return self


@dataclass
class Config:
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    preset: str = "desk"


PRESETS: Dict[str, Dict[str, object]] = {
    "desk": {"lr": 2e-3},
    "paper": {"resolution": 224, "batch_size": 80, "decay_epoch": 30, "epochs": 60, "classes": 500,
              "stages": 4, "widths": (16, 32, 64, 64)},
    "micro": {"stages": 3, "widths": (4, 8, 8), "stem_width": 4, "tapped": (2, 3), "T": 2, "r": 4,
              "branch_width": 2, "global_dim": 4, "local_dim": 4, "classes": 3, "resolution": 8,
              "batch_size": 2},
}

# file key -> (section, attribute)
_KEYS = {
    "stages": ("model", "stages"), "widths": ("model", "widths"), "stem_width": ("model", "stem_width"),
    "tapped": ("model", "tapped"), "T": ("model", "regions"), "r": ("model", "reduction"),
    "scale": ("model", "scale"), "branch_width": ("model", "branch_width"),
    "global_dim": ("model", "global_dim"), "local_dim": ("model", "local_dim"),
    "classes": ("model", "classes"), "resolution": ("model", "resolution"),
    "residual_attention": ("model", "residual_attention"),
    "batch_size": ("train", "batch_size"), "lr": ("train", "lr"), "momentum": ("train", "momentum"),
    "decay_epoch": ("train", "decay_epoch"), "decay_factor": ("train", "decay_factor"),
    "epochs": ("train", "epochs"), "seed": ("train", "seed"), "gamma1": ("train", "gamma1"),
    "gamma2": ("train", "gamma2"), "mean": ("train", "mean"), "std": ("train", "std"),
    "flip": ("train", "flip"), "checkpoint_every": ("train", "checkpoint_every"),
}


def _coerce(key: str, current, raw):
    try:
        if isinstance(current, bool):
            if isinstance(raw, bool):
                return raw
            text = str(raw).strip().lower()
            if text in ("1", "true", "yes", "on"):
                return True
            if text in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if isinstance(current, tuple):
            items = raw if isinstance(raw, (tuple, list)) else [s for s in str(raw).split(",") if s.strip()]
            kind = type(current[0]) if current else int
            values = tuple(kind(str(v).strip()) if kind is not float else float(v) for v in items)
            if key in ("mean", "std") and len(values) == 1:
                values = values * 3
            return values
        if isinstance(current, int):
            if isinstance(raw, int) or str(raw).strip().lstrip("-").isdigit():
                return int(raw)
            value = float(raw)
            if value != int(value):
                raise ValueError(raw)
            return int(value)
        return type(current)(raw)
    except (TypeError, ValueError):
        raise ConfigError(f"bad value for {key}: {raw!r}") from None


def apply(cfg: Config, overrides: Dict[str, object]) -> Config:
    for key, raw in overrides.items():
        if key == "preset":
            continue
        if key not in _KEYS:
            raise ConfigError(f"unknown config key {key!r}")
        section, attr = _KEYS[key]
        target = getattr(cfg, section)
        setattr(target, attr, _coerce(key, getattr(target, attr), raw))
    return cfg


def preset(name: str) -> Config:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}")
    return apply(Config(preset=name), PRESETS[name])


def parse(text: str) -> Dict[str, str]:
    entries: Dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ConfigError(f"line {lineno}: empty key")
        entries[key] = value
    return entries


def load(path=None, preset_name: str = None, overrides: Dict[str, object] = None) -> Config:
    """Build a config: preset (flag, then file, then ``desk``), file entries, then ``overrides``."""
    entries: Dict[str, str] = {}
    if path is not None:
        try:
            entries = parse(Path(path).read_text())
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    name = preset_name or entries.get("preset", "desk")
    cfg = preset(name)
    apply(cfg, entries)
    apply(cfg, overrides or {})
    cfg.model.validate()
    cfg.train.validate()
    return cfg


def dump(cfg: Config) -> str:
    """Serialise ``cfg`` back into the key-value format (round-trips through :func:`load`)."""
    lines = [f"preset = {cfg.preset}"]
    for key, (section, attr) in _KEYS.items():
        value = getattr(getattr(cfg, section), attr)
        if isinstance(value, tuple):
            value = ",".join(repr(v) if isinstance(v, float) else str(v) for v in value)
        elif isinstance(value, float):
            value = repr(value)
        lines.append(f"{key} = {value}")
    return "\n".join(lines) + "\n"


def replace_model(cfg: Config, **changes) -> Config:
    return dataclasses.replace(cfg, model=dataclasses.replace(cfg.model, **changes))
