"""Training configuration and the ``key = value`` config file format."""

from __future__ import annotations

import ast
import dataclasses
from dataclasses import dataclass, fields

from .errors import ConfigurationError, UsageError
from .model import ModelConfig
from .pcm import PCMConfig

OBJECTIVES = ("sspl", "infonce", "infonce_masked")
AUGMENTATIONS = ("default", "none", "full")


@dataclass
class TrainConfig:
    dataset: str = ""
    test_dataset: str = ""
    out_dir: str = "runs/default"
    epochs: int = 30
    batch_size: int = 64
    lr_heads: float = 2e-3
    lr_rest: float = 5e-4
    weight_decay: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    seed: int = 0
    patience: int = 5
    use_pcm: bool = True
    pcm_T: int = 5
    scaling_method: str = "minmax"
    fusion_mode: str = "attention"
    use_stop_gradient: bool = True
    use_pretrained_init: bool = False
    objective: str = "sspl"
    augmentation: str = "default"
    temperature: float = 0.07
    # model widths
    visual_channels: tuple = (16, 32, 64)
    audio_channels: tuple = (16, 32)
    audio_dim: int = 64
    hidden: int = 64
    embed_dim: int = 64
    pred_hidden: int = 32
    pcm_channels: tuple = (64, 64, 32)

    def validate(self):
        if self.lr_heads <= 0 or self.lr_rest <= 0:
            raise ConfigurationError("learning rates must be positive")
        if self.batch_size < 2:
            raise ConfigurationError("batch_size must be at least 2 (batch norm)")
        if self.epochs < 0:
            raise ConfigurationError("epochs must be non-negative")
        if self.patience < 1:
            raise ConfigurationError("patience must be at least 1")
        if self.use_pretrained_init:
            raise ConfigurationError("pretrained initialization is not available at desk scale")
        if self.objective not in OBJECTIVES:
            raise ConfigurationError(f"objective must be one of {OBJECTIVES}, got {self.objective!r}")
        if self.augmentation not in AUGMENTATIONS:
            raise ConfigurationError(f"augmentation must be one of {AUGMENTATIONS}, got {self.augmentation!r}")
        if self.pcm_T < 1:
            raise ConfigurationError("pcm_T must be at least 1")

    def model_config(self, image_size=64, spec_shape=(32, 32)):
        cfg = ModelConfig(
            image_size=image_size,
            spec_shape=tuple(spec_shape),
            visual_channels=tuple(self.visual_channels),
            audio_channels=tuple(self.audio_channels),
            c_a=self.audio_dim,
            g_hidden=self.hidden,
            proj_hidden=self.hidden,
            d_z=self.embed_dim,
            pred_hidden=self.pred_hidden,
            use_pcm=self.use_pcm,
            pcm=PCMConfig(layers=len(self.pcm_channels), cycles=self.pcm_T, channels=tuple(self.pcm_channels)),
            scaling=self.scaling_method,
            fusion=self.fusion_mode,
        )
        cfg.validate()
        return cfg

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)

    def to_dict(self):
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data):
        cfg = cls()
        for key, value in data.items():
            set_value(cfg, key, value)
        return cfg


def _coerce(name, default, value):
    if isinstance(default, bool):
        if isinstance(value, str):
            low = value.strip().lower()
            if low in ("true", "yes", "on", "1"):
                return True
            if low in ("false", "no", "off", "0"):
                return False
            raise UsageError(f"{name}: expected a boolean, got {value!r}")
        return bool(value)
    if isinstance(default, tuple):
        if isinstance(value, str):
            value = parse_literal(value)
        if isinstance(value, (int, float)):
            value = (value,)
        try:
            return tuple(int(v) for v in value)
        except (TypeError, ValueError):
            raise UsageError(f"{name}: expected a comma-separated list of integers, got {value!r}") from None
    if isinstance(default, (int, float)):
        if isinstance(value, str):
            value = parse_literal(value)
        try:
            out = type(default)(value)
        except (TypeError, ValueError):
            raise UsageError(f"{name}: expected {type(default).__name__}, got {value!r}") from None
        if isinstance(default, int) and out != value:
            raise UsageError(f"{name}: expected an integer, got {value!r}")
        return out
    return str(value)


def parse_literal(text):
    text = text.strip()
    try:
        return ast.literal_eval(text)
    except (ValueError, SyntaxError):
        if "," in text:
            return tuple(parse_literal(part) for part in text.split(",") if part.strip())
        return text


def set_value(cfg, key, value):
    names = {f.name for f in fields(cfg)}
    if key not in names:
        raise UsageError(f"unknown config key {key!r}")
    setattr(cfg, key, _coerce(key, getattr(cfg, key), value))


def parse_assignments(lines, source="<config>"):
    """``key = value`` lines; ``#`` starts a comment, blank lines are ignored."""
    out = {}
    for lineno, raw in enumerate(lines, 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{source}:{lineno}: expected 'key = value', got {raw.strip()!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise UsageError(f"{source}:{lineno}: missing key")
        out[key] = value
    return out


def load_config(path=None, overrides=(), seed=None, base=None):
    """Config from an optional file, then ``--set key=value`` overrides, then ``--seed``."""
    cfg = dataclasses.replace(base) if base is not None else TrainConfig()
    if path:
        try:
            with open(path) as fh:
                values = parse_assignments(fh, source=str(path))
        except OSError as exc:
            raise UsageError(f"cannot read config {path}: {exc.strerror}") from None
        for key, value in values.items():
            set_value(cfg, key, value)
    for item in overrides:
        if "=" not in item:
            raise UsageError(f"--set expects key=value, got {item!r}")
        key, value = item.split("=", 1)
        set_value(cfg, key.strip(), value.strip())
    if seed is not None:
        cfg.seed = int(seed)
    cfg.validate()
    return cfg
