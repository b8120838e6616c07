"""Configuration dataclasses and strict YAML loading.

One pipeline config file holds five nested sections (gen / encoder /
model / train / paths). Parsing is strict: unknown keys abort before any
side effect, so a typo cannot silently fall back to a default.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .errors import ConfigError

STAGE_NAMES = ("spore", "hyphae", "mycelium")
SPLIT_NAMES = ("train", "val", "test")


@dataclass
class GenConfig:
    """Parameters of the procedural dataset generator."""

    n_per_stage: int = 200
    image_size: int = 96
    t_min: float = 0.0
    t_max: float = 720.0
    stage_boundaries: tuple[float, float] = (240.0, 480.0)
    seed: int = 7
    split_ratios: tuple[float, float, float] = (0.7, 0.15, 0.15)

    def validate(self) -> None:
        if self.n_per_stage <= 0:
            raise ConfigError(f"n_per_stage must be positive, got {self.n_per_stage}")
        if self.image_size < 32:
            raise ConfigError(f"image_size must be >= 32, got {self.image_size}")
        t1, t2 = self.stage_boundaries
        if not (self.t_min < t1 < t2 < self.t_max):
            raise ConfigError(
                "stage boundaries must satisfy t_min < T1 < T2 < t_max, got "
                f"t_min={self.t_min}, T1={t1}, T2={t2}, t_max={self.t_max}"
            )
        if len(self.split_ratios) != 3 or any(r < 0 for r in self.split_ratios):
            raise ConfigError(f"split_ratios must be three nonnegative reals, got {self.split_ratios}")
        if abs(sum(self.split_ratios) - 1.0) > 1e-9:
            raise ConfigError(f"split_ratios must sum to 1, got {self.split_ratios}")


@dataclass
class EncoderConfig:
    """Image/text encoder hyperparameters.

    vocab_size left at None means "use the size of the built-in template
    vocabulary"; an explicit value must match or exceed it.
    """

    d: int = 64
    vocab_size: int | None = None
    max_tokens: int = 16
    vision_arch: str = "compact-conv"
    normalize_embeddings: bool = True

    def validate(self) -> None:
        if self.d < 8:
            raise ConfigError(f"embedding dimension d must be >= 8, got {self.d}")
        if self.max_tokens < 4:
            raise ConfigError(f"max_tokens must be >= 4, got {self.max_tokens}")
        if self.vision_arch not in ("compact-conv", "patch-mlp"):
            raise ConfigError(f"vision_arch must be 'compact-conv' or 'patch-mlp', got {self.vision_arch!r}")
        if self.vocab_size is not None and self.vocab_size <= 0:
            raise ConfigError(f"vocab_size must be positive, got {self.vocab_size}")


@dataclass
class ModelConfig:
    """Architecture hyperparameters of the two prediction heads."""

    d: int = 64
    n_encoder_layers: int = 2
    ffn_hidden: int = 256
    n_attention_heads: int = 4
    n_classes: int = 3
    dropout: float = 0.0

    def validate(self) -> None:
        if self.d <= 0 or self.n_encoder_layers <= 0 or self.ffn_hidden <= 0:
            raise ConfigError("d, n_encoder_layers and ffn_hidden must be positive")
        if self.n_attention_heads <= 0 or self.d % self.n_attention_heads != 0:
            raise ConfigError(
                f"n_attention_heads must be positive and divide d, got heads={self.n_attention_heads}, d={self.d}"
            )
        if self.n_classes <= 0:
            raise ConfigError(f"n_classes must be positive, got {self.n_classes}")
        if not (0.0 <= self.dropout < 1.0):
            raise ConfigError(f"dropout must lie in [0, 1), got {self.dropout}")


@dataclass
class TrainConfig:
    """Optimization loop hyperparameters."""

    epochs: int = 30
    batch_size: int = 32
    learning_rate: float = 1e-4
    alpha: float = 1.0
    beta: float = 1.0
    seed: int = 7
    optimizer: str = "adam"

    def validate(self) -> None:
        if self.epochs <= 0 or self.batch_size <= 0:
            raise ConfigError("epochs and batch_size must be positive")
        if self.learning_rate <= 0:
            raise ConfigError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.alpha < 0 or self.beta < 0:
            raise ConfigError(f"loss weights must be nonnegative, got alpha={self.alpha}, beta={self.beta}")
        if self.alpha + self.beta <= 0:
            raise ConfigError("alpha + beta must be positive")
        if self.optimizer not in ("adam", "sgd"):
            raise ConfigError(f"optimizer must be 'adam' or 'sgd', got {self.optimizer!r}")


@dataclass
class PathsConfig:
    """Filesystem layout for one experiment."""

    data_dir: str = "data"
    run_dir: str = "runs/default"


@dataclass
class PipelineConfig:
    """Top-level config tying the whole pipeline together."""

    gen: GenConfig = field(default_factory=GenConfig)
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    paths: PathsConfig = field(default_factory=PathsConfig)

    def validate(self) -> None:
        self.gen.validate()
        self.encoder.validate()
        self.model.validate()
        self.train.validate()
        if self.encoder.d != self.model.d:
            raise ConfigError(
                f"encoder.d ({self.encoder.d}) and model.d ({self.model.d}) must match"
            )


_SECTION_TYPES = {
    "gen": GenConfig,
    "encoder": EncoderConfig,
    "model": ModelConfig,
    "train": TrainConfig,
    "paths": PathsConfig,
}

# Fields parsed from YAML lists into tuples.
_TUPLE_FIELDS = {"stage_boundaries", "split_ratios"}


def _build_section(cls, mapping: dict, section: str):
    known = {f.name: f for f in dataclasses.fields(cls)}
    unknown = set(mapping) - set(known)
    if unknown:
        raise ConfigError(f"unknown key(s) in section '{section}': {', '.join(sorted(unknown))}")
    kwargs = {}
    for key, value in mapping.items():
        if key in _TUPLE_FIELDS:
            if not isinstance(value, (list, tuple)):
                raise ConfigError(f"'{section}.{key}' must be a list, got {type(value).__name__}")
            value = tuple(value)
        kwargs[key] = value
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"bad value in section '{section}': {exc}") from exc


def load_pipeline_config(path: str | Path) -> PipelineConfig:
    """Parse and validate a pipeline config file.

    Raises ConfigError on unknown keys, wrong types or violated invariants.
    """
    path = Path(path)
    try:
        raw = yaml.safe_load(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"could not parse {path}: {exc}") from exc
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError(f"top level of {path} must be a mapping")

    unknown = set(raw) - set(_SECTION_TYPES)
    if unknown:
        raise ConfigError(f"unknown top-level section(s): {', '.join(sorted(unknown))}")

    sections = {}
    for name, cls in _SECTION_TYPES.items():
        body = raw.get(name, {})
        if body is None:
            body = {}
        if not isinstance(body, dict):
            raise ConfigError(f"section '{name}' must be a mapping")
        sections[name] = _build_section(cls, body, name)

    cfg = PipelineConfig(**sections)
    cfg.validate()
    return cfg


def dump_pipeline_config(cfg: PipelineConfig) -> str:
    """Render a config back to YAML (used by `fungaltime init-config`)."""
    as_dict = dataclasses.asdict(cfg)
    for section in as_dict.values():
        for key, value in section.items():
            if isinstance(value, tuple):
                section[key] = list(value)
    return yaml.safe_dump(as_dict, sort_keys=False)
