"""Experiment configuration: sections, presets, file parsing, overrides.

Configs are strict: unknown sections or keys raise instead of being ignored,
so a typo cannot silently fall back to a default.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .exceptions import ValidationError
from .schedule import ScaleSchedule, make_schedule
from .spectral import SpectralConfig


@dataclass
class CodecSection:
    sample_rate: int = 24000
    window_seconds: float = 1.0
    schedule_kind: str = "quadratic"
    n_scales: int = 16
    top_length: int = 75
    explicit_lengths: tuple[int, ...] | None = None
    latent_dim: int = 64
    vocab_size: int = 1024
    base_channels: int = 16
    strides: tuple[int, ...] = (2, 4, 5, 8)
    gamma: float = 0.5
    phi_grouping: str = "partially_shared"
    phi_group_size: int = 3
    codebook_sharing: str = "per_scale"
    codebook_update: str = "ema"
    ema_decay: float = 0.99
    dead_code_epochs: int = 2

    @property
    def window_samples(self) -> int:
        return int(round(self.window_seconds * self.sample_rate))

    @property
    def stride_product(self) -> int:
        return math.prod(self.strides)

    def validate(self) -> None:
        if self.window_samples % self.stride_product != 0:
            raise ValidationError(
                f"window of {self.window_samples} samples is not divisible by "
                f"encoder stride {self.stride_product}"
            )
        frames = self.window_samples // self.stride_product
        if frames != self.top_length:
            raise ValidationError(
                f"top_length {self.top_length} != encoder frames {frames} "
                f"({self.window_samples} samples / {self.stride_product} stride)"
            )
        if not 0.0 <= self.gamma <= 1.0:
            raise ValidationError("gamma must be in [0, 1]")

    def schedule(self) -> ScaleSchedule:
        return make_schedule(self.schedule_kind, K=self.n_scales,
                             top_length=self.top_length, lengths=self.explicit_lengths)


@dataclass
class Stage1Section:
    epochs: int = 100
    batch_size: int = 8
    lr: float = 3e-4
    beta1: float = 0.5
    beta2: float = 0.9
    lr_schedule: str = "cosine"
    lambda_t: float = 0.1
    lambda_f: float = 3.0
    lambda_g: float = 3.0
    lambda_com: float = 1.0
    adversarial: bool = True
    disc_update_prob: float = 2.0 / 3.0
    disc_windows: tuple[int, ...] = (2048, 1024, 512)
    disc_channels: int = 16
    mel_windows: tuple[int, ...] = (64, 128, 256, 512, 1024)
    mel_bins: tuple[int, ...] = (8, 16, 32, 64, 80)
    data_init_codebooks: bool = True
    eval_every_epochs: int = 5
    early_stop_mel_ratio: float | None = None

    def spectral(self) -> SpectralConfig:
        return SpectralConfig(window_sizes=self.mel_windows, mel_bins=self.mel_bins)


@dataclass
class Stage2Section:
    depth: int = 6
    width: int = 256
    heads: int = 8
    mlp_ratio: float = 4.0
    cond_dim: int = 64
    cfg_drop_prob: float = 0.1
    epochs: int = 50
    batch_size: int = 8
    lr: float = 1e-4
    weight_decay: float = 0.05
    warmup_proportion: float = 0.005
    end_lr_proportion: float = 0.01
    grad_clip: float = 1.0
    cumulative_inputs: bool = False
    use_pos_emb: bool = True
    early_stop_ce: float | None = None


@dataclass
class SamplerSection:
    cfg_scale: float = 2.0
    top_k: int | None = 200
    top_p: float | None = 0.95
    temperature: float = 1.0
    seed: int = 0


@dataclass
class SeedsSection:
    master: int = 0
    deterministic: bool = False


@dataclass
class ExperimentConfig:
    codec: CodecSection = field(default_factory=CodecSection)
    stage1: Stage1Section = field(default_factory=Stage1Section)
    stage2: Stage2Section = field(default_factory=Stage2Section)
    sampler: SamplerSection = field(default_factory=SamplerSection)
    seeds: SeedsSection = field(default_factory=SeedsSection)

    def validate(self) -> None:
        self.codec.validate()
        self.codec.schedule()
        if self.stage2.width % self.stage2.heads != 0:
            raise ValidationError("stage2 width must be divisible by heads")
        if not 0.0 <= self.stage2.cfg_drop_prob <= 1.0:
            raise ValidationError("cfg_drop_prob must be in [0, 1]")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, default=list)
        return hashlib.sha256(blob.encode()).hexdigest()


_SECTIONS = {
    "codec": CodecSection,
    "stage1": Stage1Section,
    "stage2": Stage2Section,
    "sampler": SamplerSection,
    "seeds": SeedsSection,
}


def _coerce(value, default):
    """Coerce a parsed scalar/list toward the type of the field default."""
    if value is None or (isinstance(value, str) and value.lower() in ("none", "null")):
        return None
    if isinstance(default, bool) or (default is None and isinstance(value, bool)):
        if isinstance(value, bool):
            return value
        if isinstance(value, str):
            if value.lower() in ("true", "1", "yes"):
                return True
            if value.lower() in ("false", "0", "no"):
                return False
        raise ValidationError(f"cannot parse boolean from {value!r}")
    if isinstance(default, tuple) or isinstance(value, (list, tuple)):
        if isinstance(value, str):
            value = [v for v in value.replace(",", " ").split() if v]
        items = []
        for v in value:
            fv = float(v)
            items.append(int(fv) if fv == int(fv) else fv)
        return tuple(items)
    if isinstance(default, int) and not isinstance(default, bool):
        fv = float(value)
        if fv != int(fv):
            raise ValidationError(f"expected integer, got {value!r}")
        return int(fv)
    if isinstance(default, float):
        return float(value)
    if isinstance(default, str):
        return str(value)
    # Optional fields with None defaults: infer from the parsed value
    if isinstance(value, (list, tuple)):
        return tuple(value)
    if isinstance(value, str):
        try:
            fv = float(value)
            return int(fv) if fv == int(fv) else fv
        except ValueError:
            return value
    return value


def config_from_dict(data: dict) -> ExperimentConfig:
    """Build a config from nested dicts, rejecting unknown sections/keys."""
    if not isinstance(data, dict):
        raise ValidationError("config root must be a mapping of sections")
    cfg = ExperimentConfig()
    for section_name, section_data in data.items():
        if section_name not in _SECTIONS:
            raise ValidationError(f"unknown config section {section_name!r}")
        if section_data is None:
            continue
        if not isinstance(section_data, dict):
            raise ValidationError(f"section {section_name!r} must be a mapping")
        section = getattr(cfg, section_name)
        defaults = {f.name: getattr(type(section)(), f.name)
                    for f in dataclasses.fields(section)}
        for key, value in section_data.items():
            if key not in defaults:
                raise ValidationError(f"unknown key {section_name}.{key}")
            setattr(section, key, _coerce(value, defaults[key]))
    cfg.validate()
    return cfg


def load_config(path: str | Path) -> ExperimentConfig:
    with Path(path).open() as fh:
        data = yaml.safe_load(fh) or {}
    return config_from_dict(data)


def save_config(path: str | Path, cfg: ExperimentConfig) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(cfg.to_dict(), indent=2, default=list) + "\n")


def apply_overrides(cfg: ExperimentConfig, overrides: list[str]) -> ExperimentConfig:
    """Apply 'section.key=value' strings on top of a config."""
    for item in overrides:
        if "=" not in item or "." not in item.split("=", 1)[0]:
            raise ValidationError(f"override must look like section.key=value, got {item!r}")
        dotted, value = item.split("=", 1)
        section_name, key = dotted.split(".", 1)
        if section_name not in _SECTIONS:
            raise ValidationError(f"unknown config section {section_name!r}")
        section = getattr(cfg, section_name)
        fields = {f.name for f in dataclasses.fields(section)}
        if key not in fields:
            raise ValidationError(f"unknown key {section_name}.{key}")
        default = getattr(type(section)(), key)
        setattr(section, key, _coerce(value, default))
    cfg.validate()
    return cfg


def preset(name: str) -> ExperimentConfig:
    if name not in PRESETS:
        raise ValidationError(f"unknown preset {name!r}; available: {sorted(PRESETS)}")
    return config_from_dict(json.loads(json.dumps(PRESETS[name])))


PRESETS: dict[str, dict] = {
    # Small enough to train on a single desk CPU in minutes. Large strides
    # first keeps the expensive full-rate layers thin.
    "desk-tiny": {
        "codec": {
            "schedule_kind": "quadratic",
            "n_scales": 8,
            "top_length": 75,
            "latent_dim": 64,
            "base_channels": 16,
            "strides": [8, 5, 4, 2],
        },
        "stage1": {
            "epochs": 400,
            "batch_size": 8,
            "lr": 1e-3,
            "beta1": 0.9,
            "eval_every_epochs": 25,
            "disc_channels": 16,
        },
        "stage2": {
            "depth": 6,
            "width": 256,
            "heads": 8,
            "epochs": 150,
            "lr": 1e-3,
        },
    },
    # Published training configuration: 16 quadratic scales over 75 frames,
    # depth-16 transformer, the stage-1/stage-2 optimizer settings.
    "paper-1s-16scale-quadratic": {
        "codec": {
            "schedule_kind": "quadratic",
            "n_scales": 16,
            "top_length": 75,
            "latent_dim": 64,
            "base_channels": 64,
        },
        "stage1": {
            "epochs": 100,
            "lr": 3e-4,
        },
        "stage2": {
            "depth": 16,
            "width": 1024,
            "heads": 16,
            "lr": 1e-4,
            "weight_decay": 0.05,
        },
    },
}
