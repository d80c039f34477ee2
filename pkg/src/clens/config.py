"""Experiment configuration: typed dataclass plus a key-value file format.

Config files are plain text, one ``key = value`` per line, ``#`` comments
allowed. Keys are dotted paths mirroring the config structure; unknown keys
are an error so typos fail loudly.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields
from pathlib import Path

__all__ = [
    "StreamConfig",
    "BackboneConfig",
    "PeftConfig",
    "HeadConfig",
    "EnsembleConfig",
    "RunConfig",
    "ExperimentConfig",
    "parse_config_text",
    "load_config",
    "config_to_text",
]

_MODES = ("aee", "se", "noe", "naive_base", "misaligned")


@dataclass
class StreamConfig:
    kind: str = "synthetic"  # synthetic | idx
    tasks: int = 10
    classes_per_task: int = 10
    input_dim: int = 64
    disc_dims: int = 4
    noise: float = 0.3
    samples_per_class: int = 25
    pretrain_classes: int = 0
    shuffle_seed: int = 1993
    first_task_size: int = 0  # 0: equal split
    train_images: str = ""
    train_labels: str = ""
    test_images: str = ""
    test_labels: str = ""


@dataclass
class BackboneConfig:
    kind: str = "random_projection"  # random_projection | pretrained_mlp
    dim: int = 0  # 0: 64 for vectors, 128 for images
    hidden: int = 128
    epochs: int = 30
    lr: float = 1e-3
    batch_size: int = 64


@dataclass
class PeftConfig:
    kind: str = "adapter"  # adapter | lora
    rank: int = 16
    alpha: float = 0.0
    epochs: int = 20
    lr: float = 5e-4
    batch_size: int = 64
    weight_decay: float = 0.0


@dataclass
class HeadConfig:
    lr: float = 0.1
    epochs: int = 30
    batch_size: int = 64
    replay_per_class: int = 0  # 0: match current-task density


@dataclass
class EnsembleConfig:
    mode: str = "aee"  # aee | se | noe | naive_base | misaligned
    scores: str = "softmax"  # softmax | logits


@dataclass
class RunConfig:
    seed: int = 1993
    figures: bool = True
    save_state: bool = False
    probe_epochs: int = 30


@dataclass
class ExperimentConfig:
    stream: StreamConfig = field(default_factory=StreamConfig)
    backbone: BackboneConfig = field(default_factory=BackboneConfig)
    peft: PeftConfig = field(default_factory=PeftConfig)
    head: HeadConfig = field(default_factory=HeadConfig)
    ensemble: EnsembleConfig = field(default_factory=EnsembleConfig)
    run: RunConfig = field(default_factory=RunConfig)

    def __post_init__(self) -> None:
        self.validate()

    def validate(self) -> None:
        if self.stream.kind not in ("synthetic", "idx"):
            raise ValueError(f"unknown stream.kind {self.stream.kind!r}")
        if self.stream.kind == "idx":
            for key in ("train_images", "train_labels", "test_images", "test_labels"):
                if not getattr(self.stream, key):
                    raise ValueError(f"stream.{key} is required for idx streams")
        if self.stream.tasks < 1:
            raise ValueError("stream.tasks must be positive")
        if self.backbone.kind not in ("random_projection", "pretrained_mlp"):
            raise ValueError(f"unknown backbone.kind {self.backbone.kind!r}")
        if self.backbone.kind == "pretrained_mlp" and self.stream.pretrain_classes < 2:
            raise ValueError("pretrained_mlp needs stream.pretrain_classes >= 2")
        if self.ensemble.mode not in _MODES:
            raise ValueError(f"ensemble.mode must be one of {_MODES}")
        if self.ensemble.scores not in ("softmax", "logits"):
            raise ValueError("ensemble.scores must be softmax or logits")
        if self.peft.alpha > 0 and self.stream.kind != "idx":
            raise ValueError("peft.alpha > 0 requires an image (idx) stream")

    def backbone_dim(self) -> int:
        if self.backbone.dim:
            return self.backbone.dim
        return 128 if self.stream.kind == "idx" else 64


_SECTIONS = {
    "stream": StreamConfig,
    "backbone": BackboneConfig,
    "peft": PeftConfig,
    "head": HeadConfig,
    "ensemble": EnsembleConfig,
    "run": RunConfig,
}

_KEY_ALIASES = {
    "run.probe_epochs": ("run", "probe_epochs"),
}


def _field_types(cls) -> dict[str, type]:
    return {f.name: f.type for f in fields(cls)}


def _coerce(raw: str, ftype, key: str):
    raw = raw.strip()
    if ftype in (int, "int"):
        return int(raw)
    if ftype in (float, "float"):
        return float(raw)
    if ftype in (bool, "bool"):
        low = raw.lower()
        if low in ("true", "1", "yes"):
            return True
        if low in ("false", "0", "no"):
            return False
        raise ValueError(f"cannot parse boolean from {raw!r} for {key}")
    return raw


def parse_config_text(text: str, overrides: dict[str, str] | None = None) -> ExperimentConfig:
    """Build a config from ``key = value`` lines, then apply overrides."""
    config = ExperimentConfig()
    pairs: list[tuple[str, str]] = []
    for lineno, line in enumerate(text.splitlines(), 1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ValueError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, raw = stripped.split("=", 1)
        pairs.append((key.strip(), raw.strip()))
    for key, raw in list((overrides or {}).items()):
        pairs.append((key, raw))

    for key, raw in pairs:
        if key in _KEY_ALIASES:
            section_name, field_name = _KEY_ALIASES[key]
        else:
            if "." not in key:
                raise ValueError(f"unknown config key {key!r}")
            section_name, field_name = key.split(".", 1)
        section = getattr(config, section_name, None)
        if section_name not in _SECTIONS or section is None:
            raise ValueError(f"unknown config key {key!r}")
        types = _field_types(_SECTIONS[section_name])
        if field_name not in types:
            raise ValueError(f"unknown config key {key!r}")
        setattr(section, field_name, _coerce(raw, types[field_name], key))
    config.validate()
    return config


def load_config(path, overrides: dict[str, str] | None = None) -> ExperimentConfig:
    return parse_config_text(Path(path).read_text(), overrides)


def config_to_text(config: ExperimentConfig) -> str:
    """Serialise back to the key-value format (round-trips via parse)."""
    lines = []
    for section_name, cls in _SECTIONS.items():
        section = getattr(config, section_name)
        for f in fields(cls):
            lines.append(f"{section_name}.{f.name} = {getattr(section, f.name)}")
    return "\n".join(lines) + "\n"
