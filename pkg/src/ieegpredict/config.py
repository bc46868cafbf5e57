"""Run configuration: one JSON document with a section per pipeline stage."""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

from .predictor import ArchitectureConfig, TrainConfig
from .signal_core import PipelineConfig
from .spectro import StftConfig
from .synthgen import SynthConfig


class ConfigError(ValueError):
    pass


def derive_seed(master: int, label: str) -> int:
    """Stage seed from the master seed by labeled hashing (stable across runs and platforms)."""
    digest = hashlib.sha256(f"{int(master)}/{label}".encode()).digest()
    return int.from_bytes(digest[:8], "little") >> 1


def _section(cls, doc, name: str):
    if doc is None:
        return cls()
    if not isinstance(doc, dict):
        raise ConfigError(f"section {name!r} must be an object")
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = set(doc) - known
    if unknown:
        raise ConfigError(f"section {name!r}: unknown keys {sorted(unknown)}")
    try:
        return cls(**doc)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"section {name!r}: {exc}") from None


@dataclass
class RunConfig:
    pipeline: PipelineConfig = field(default_factory=PipelineConfig)
    stft: StftConfig = field(default_factory=StftConfig)
    architecture: ArchitectureConfig = field(default_factory=ArchitectureConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    synth: SynthConfig = field(default_factory=SynthConfig)
    seed: int = 0

    SECTIONS = {
        "pipeline": PipelineConfig,
        "stft": StftConfig,
        "architecture": ArchitectureConfig,
        "train": TrainConfig,
        "synth": SynthConfig,
    }

    @classmethod
    def from_dict(cls, doc: dict) -> "RunConfig":
        if not isinstance(doc, dict):
            raise ConfigError("config must be a JSON object")
        unknown = set(doc) - set(cls.SECTIONS) - {"seed"}
        if unknown:
            raise ConfigError(f"unknown config sections {sorted(unknown)}")
        kwargs = {name: _section(kind, doc.get(name), name) for name, kind in cls.SECTIONS.items()}
        seed = doc.get("seed", 0)
        if not isinstance(seed, int) or seed < 0:
            raise ConfigError("seed must be a non-negative integer")
        return cls(**kwargs, seed=seed)

    @classmethod
    def load(cls, path) -> "RunConfig":
        try:
            doc = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON: {exc}") from None
        return cls.from_dict(doc)

    def override(self, section: str, **changes) -> None:
        current = getattr(self, section)
        try:
            setattr(self, section, dataclasses.replace(current, **changes))
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"section {section!r}: {exc}") from None

    def to_dict(self) -> dict:
        out = {name: dataclasses.asdict(getattr(self, name)) for name in self.SECTIONS}
        out["architecture"]["fc_sizes"] = list(out["architecture"]["fc_sizes"])
        out["seed"] = self.seed
        return out
