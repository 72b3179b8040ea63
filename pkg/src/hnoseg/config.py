"""JSON run configuration: model, train and data sections."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from .models import ModelConfig
from .synthdata import Dataset, SceneSpec, make_dataset
from .trainer import TrainConfig


@dataclass
class DataConfig:
    seed: int = 0
    n: int = 40
    resolution: tuple = (32, 32, 32)
    spec: SceneSpec = field(default_factory=SceneSpec)

    def __post_init__(self):
        if isinstance(self.resolution, int):
            self.resolution = (self.resolution,) * 3
        self.resolution = tuple(int(r) for r in self.resolution)
        if len(self.resolution) != 3 or any(r % 2 or r < 2 for r in self.resolution):
            raise ValueError(f"data.resolution must be three even sizes, got {self.resolution}")
        if self.n < 2:
            raise ValueError(f"data.n must be >= 2, got {self.n}")

    def to_dict(self) -> dict:
        return {"seed": self.seed, "n": self.n, "resolution": list(self.resolution),
                "spec": self.spec.to_dict()}

    @classmethod
    def from_dict(cls, d: dict) -> "DataConfig":
        unknown = set(d) - {"seed", "n", "resolution", "spec"}
        if unknown:
            raise ValueError(f"unknown data config keys: {sorted(unknown)}")
        d = dict(d)
        if "spec" in d:
            d["spec"] = SceneSpec.from_dict(d["spec"])
        return cls(**d)

    def build(self) -> Dataset:
        return make_dataset(self.seed, self.n, self.spec, self.resolution)


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    data: DataConfig = field(default_factory=DataConfig)

    def validate(self) -> None:
        """Cross-section checks on top of each section's own validation."""
        self.model.validate()
        self.train.validate()
        self.model.check_resolution(self.data.resolution)
        for r in self.train.eval_resolutions:
            self.model.check_resolution((r, r, r))
        if self.model.in_channels != self.data.spec.in_channels:
            raise ValueError(f"model.in_channels={self.model.in_channels} but the data has "
                             f"{self.data.spec.in_channels} channels")
        if self.model.num_labels != self.data.spec.num_labels:
            raise ValueError(f"model.num_labels={self.model.num_labels} but the data has "
                             f"{self.data.spec.num_labels} labels")

    def to_dict(self) -> dict:
        return {"model": self.model.to_dict(), "train": self.train.to_dict(), "data": self.data.to_dict()}

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        if not isinstance(d, dict):
            raise ValueError("run config must be a JSON object")
        unknown = set(d) - {"model", "train", "data"}
        if unknown:
            raise ValueError(f"unknown run config sections: {sorted(unknown)}")
        cfg = cls(ModelConfig.from_dict(d.get("model", {})),
                  TrainConfig.from_dict(d.get("train", {})),
                  DataConfig.from_dict(d.get("data", {})))
        cfg.validate()
        return cfg


def load_run_config(path: Optional[str]) -> RunConfig:
    if path is None:
        cfg = RunConfig()
        cfg.validate()
        return cfg
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ValueError(f"{path}: invalid JSON ({exc})") from None
    return RunConfig.from_dict(raw)
