"""JSON run configuration with one section per module."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields

from .model import Backbone
from .phantom import PhantomParams
from .synth import SynthParams
from .trainer import TrainConfig


class ConfigError(ValueError):
    pass


def _strict(cls, section: str, d: dict):
    if not isinstance(d, dict):
        raise ConfigError(f"section {section!r} must be an object")
    unknown = set(d) - {f.name for f in fields(cls)}
    if unknown:
        raise ConfigError(f"unknown keys in {section!r}: {sorted(unknown)}")
    return cls(**d)


@dataclass
class ModelSection:
    base_channels: int = 16
    variant: str = Backbone.TWO_BRANCH.value
    slope: float = 0.2

    def __post_init__(self):
        Backbone(self.variant)
        if self.base_channels < 1:
            raise ConfigError("model.base_channels must be >= 1")


@dataclass
class EvalSection:
    window_height: int = 64
    threshold: float = 0.5
    pooled: bool = False


@dataclass
class PathsSection:
    corpus: str | None = None
    checkpoint: str | None = None
    out: str | None = None


@dataclass
class Config:
    synth: SynthParams = field(default_factory=SynthParams)
    train: TrainConfig = field(default_factory=TrainConfig)
    phantom: PhantomParams = field(default_factory=PhantomParams)
    model: ModelSection = field(default_factory=ModelSection)
    eval: EvalSection = field(default_factory=EvalSection)
    paths: PathsSection = field(default_factory=PathsSection)

    def to_dict(self) -> dict:
        return {
            "synth": self.synth.to_dict(),
            "train": self.train.to_dict(),
            "phantom": self.phantom.to_dict(),
            "model": asdict(self.model),
            "eval": asdict(self.eval),
            "paths": asdict(self.paths),
        }

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n"


SECTIONS = {
    "synth": SynthParams,
    "train": TrainConfig,
    "phantom": PhantomParams,
    "model": ModelSection,
    "eval": EvalSection,
    "paths": PathsSection,
}


def config_from_dict(doc: dict) -> Config:
    """Build a Config; missing keys take defaults, unknown ones are errors.

    A top-level ``synth`` section also becomes the trainer's synthesis
    parameters unless ``train.synth`` is given.
    """
    if not isinstance(doc, dict):
        raise ConfigError("configuration must be a JSON object")
    unknown = set(doc) - set(SECTIONS)
    if unknown:
        raise ConfigError(f"unknown config sections: {sorted(unknown)}")
    try:
        parts = {name: _strict(cls, name, doc.get(name, {})) for name, cls in SECTIONS.items()}
        if "synth" in doc and "synth" not in doc.get("train", {}):
            parts["train"].synth = parts["synth"]
        else:
            parts["synth"] = parts["train"].synth
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None
    return Config(**parts)


def load_config(path) -> Config:
    if path is None:
        return Config()
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    return config_from_dict(doc)
