"""Training configuration and its YAML form.

``TrainConfig()`` carries the full-scale hyperparameters; ``desk_scale()``
is the small preset used for the synthetic corpus and the test-suite.
"""

from __future__ import annotations

import dataclasses
from dataclasses import asdict, dataclass, field
from pathlib import Path

import yaml

from decoclip.encoders import EncoderConfig
from decoclip.pipeline.augment import AugmentationSpec

LOSSES = ("semantic", "infonce")
SAMPLINGS = ("decoupled", "stratified", "paired")
DTYPES = ("float32", "float64")


class ConfigError(ValueError):
    pass


@dataclass
class TrainConfig:
    learning_rate: float = 5e-5
    batch_size: int = 100
    weight_decay: float = 1e-4
    epochs: int = 10
    warmup_ratio: float = 0.1
    seed: int = 0
    image_size: int = 224
    augmentation: AugmentationSpec = field(default_factory=AugmentationSpec)
    encoder: EncoderConfig = field(default_factory=lambda: EncoderConfig(image_size=224, proj_dim=512))
    loss: str = "semantic"
    sampling: str = "decoupled"
    betas: tuple[float, float] = (0.9, 0.999)
    adam_eps: float = 1e-8
    dtype: str = "float64"
    mixed_precision: bool = False
    deterministic: bool = True
    max_steps: int | None = None

    def __post_init__(self):
        if isinstance(self.augmentation, dict):
            self.augmentation = AugmentationSpec(**self.augmentation)
        if isinstance(self.encoder, dict):
            self.encoder = EncoderConfig(**self.encoder)
        self.betas = tuple(self.betas)
        self.validate()

    def validate(self):
        if self.learning_rate <= 0 or self.weight_decay < 0 or self.adam_eps <= 0:
            raise ConfigError("rates must be positive")
        if self.batch_size < 2 or self.epochs < 1:
            raise ConfigError("batch_size must be >= 2 and epochs >= 1")
        if not 0.0 <= self.warmup_ratio <= 1.0:
            raise ConfigError("warmup_ratio must lie in [0, 1]")
        if self.augmentation.crop_to != self.image_size:
            raise ConfigError(
                f"augmentation.crop_to ({self.augmentation.crop_to}) must equal image_size ({self.image_size})"
            )
        if self.encoder.image_size != self.image_size:
            raise ConfigError("encoder.image_size must equal image_size")
        if self.loss not in LOSSES:
            raise ConfigError(f"loss must be one of {LOSSES}")
        if self.sampling not in SAMPLINGS:
            raise ConfigError(f"sampling must be one of {SAMPLINGS}")
        if self.dtype not in DTYPES:
            raise ConfigError(f"dtype must be one of {DTYPES}")
        if self.mixed_precision:
            raise ConfigError("mixed_precision is reserved; reference mode runs in full precision")

    @classmethod
    def desk_scale(cls, **overrides) -> "TrainConfig":
        base = dict(
            learning_rate=3e-3, batch_size=50, weight_decay=1e-4, epochs=30, warmup_ratio=0.1,
            image_size=32, augmentation=AugmentationSpec.desk_scale(),
            encoder=EncoderConfig(image_size=32),
        )
        base.update(overrides)
        return cls(**base)

    def replace(self, **changes) -> "TrainConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["betas"] = list(self.betas)
        d["augmentation"] = {k: list(v) if isinstance(v, tuple) else v
                             for k, v in d["augmentation"].items()}
        d["encoder"]["conv_channels"] = list(self.encoder.conv_channels)
        return d


def _check_keys(section: str, given: dict, allowed) -> None:
    unknown = sorted(set(given) - set(allowed))
    if unknown:
        raise ConfigError(f"unknown {section} keys: {', '.join(unknown)}")


def config_from_dict(data: dict, preset: str | None = None) -> TrainConfig:
    data = dict(data or {})
    preset = data.pop("preset", preset) or "full"
    if preset not in ("full", "desk"):
        raise ConfigError(f"unknown preset {preset!r}")
    base = TrainConfig.desk_scale() if preset == "desk" else TrainConfig()
    _check_keys("config", data, [f.name for f in dataclasses.fields(TrainConfig)])
    aug = data.pop("augmentation", None) or {}
    enc = data.pop("encoder", None) or {}
    _check_keys("augmentation", aug, [f.name for f in dataclasses.fields(AugmentationSpec)])
    _check_keys("encoder", enc, [f.name for f in dataclasses.fields(EncoderConfig)])
    image_size = data.get("image_size", base.image_size)
    aug_d = asdict(base.augmentation)
    aug_d.update(aug)
    if "crop_to" not in aug and "image_size" in data:
        aug_d["crop_to"] = image_size
        aug_d["resize_to"] = max(aug_d["resize_to"], image_size)
    enc_d = asdict(base.encoder)
    enc_d.update(enc)
    enc_d["image_size"] = image_size
    fields = {f.name: getattr(base, f.name) for f in dataclasses.fields(TrainConfig)}
    fields.update(data)
    fields["augmentation"] = AugmentationSpec(**aug_d)
    fields["encoder"] = EncoderConfig(**enc_d)
    try:
        return TrainConfig(**fields)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path: str | Path) -> TrainConfig:
    """Load a YAML key-value config; unknown keys are rejected."""
    data = yaml.safe_load(Path(path).read_text()) or {}
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: expected a mapping at top level")
    return config_from_dict(data)


def dump_config(config: TrainConfig, path: str | Path) -> None:
    Path(path).write_text(yaml.safe_dump(config.to_dict(), sort_keys=False))
