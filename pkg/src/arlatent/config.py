"""Experiment configuration: one resolved tree drives every command.

Config files are JSON with ``//`` line comments and ``/* */`` block comments
allowed; unknown keys are rejected so typos fail loudly.  Every field has a
default, so an empty file (or no file) is a valid experiment.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

from .errors import InvalidConfigError
from .models import ModelConfig
from .synth import VariationConfig
from .training import TrainConfig


@dataclass
class DatasetSection:
    n: int = 2000
    seed: int = 0
    canvas: tuple[int, int] = (64, 64)
    split_fractions: tuple[float, float, float] = (0.7, 0.15, 0.15)
    variation: VariationConfig = field(default_factory=VariationConfig)
    path: str | None = None  # archive location; defaults to <output_dir>/dataset

    def to_dict(self) -> dict:
        d = asdict(self)
        d["canvas"] = list(self.canvas)
        d["split_fractions"] = list(self.split_fractions)
        d["variation"] = self.variation.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "DatasetSection":
        d = dict(d)
        if "canvas" in d:
            d["canvas"] = tuple(d["canvas"])
        if "split_fractions" in d:
            d["split_fractions"] = tuple(d["split_fractions"])
        if "variation" in d and isinstance(d["variation"], dict):
            d["variation"] = VariationConfig.from_dict(d["variation"])
        try:
            return cls(**d)
        except TypeError as exc:
            raise InvalidConfigError(f"unknown dataset field: {exc}") from exc


@dataclass
class EvalSection:
    split: str = "test"
    batch_size: int = 128
    traversal_range: tuple[float, float] = (-3.0, 3.0)
    traversal_steps: int = 9
    n_traversal_bases: int = 20
    traversal_seed: int = 0

    def to_dict(self) -> dict:
        d = asdict(self)
        d["traversal_range"] = list(self.traversal_range)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "EvalSection":
        d = dict(d)
        if "traversal_range" in d:
            d["traversal_range"] = tuple(d["traversal_range"])
        try:
            return cls(**d)
        except TypeError as exc:
            raise InvalidConfigError(f"unknown eval field: {exc}") from exc


@dataclass
class ExperimentConfig:
    dataset: DatasetSection = field(default_factory=DatasetSection)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalSection = field(default_factory=EvalSection)
    output_dir: str = "runs"

    def validate(self) -> None:
        self.model.validate()
        self.train.validate()
        h, w = self.dataset.canvas
        if h != w or h != self.model.image_size:
            raise InvalidConfigError(
                f"dataset canvas {self.dataset.canvas} must be square and match "
                f"model image_size {self.model.image_size}"
            )

    def archive_path(self) -> Path:
        if self.dataset.path is not None:
            return Path(self.dataset.path)
        return Path(self.output_dir) / "dataset"

    def to_dict(self) -> dict:
        return {
            "dataset": self.dataset.to_dict(),
            "model": self.model.to_dict(),
            "train": self.train.to_dict(),
            "eval": self.eval.to_dict(),
            "output_dir": self.output_dir,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        d = dict(d)
        known = {f: d.pop(f) for f in ("dataset", "model", "train", "eval", "output_dir") if f in d}
        if d:
            raise InvalidConfigError(f"unknown top-level config keys: {sorted(d)}")
        cfg = cls(
            dataset=DatasetSection.from_dict(known.get("dataset", {})),
            model=ModelConfig.from_dict(known.get("model", {})),
            train=TrainConfig.from_dict(known.get("train", {})),
            eval=EvalSection.from_dict(known.get("eval", {})),
            output_dir=known.get("output_dir", "runs"),
        )
        cfg.validate()
        return cfg


def strip_json_comments(text: str) -> str:
    """Remove // and /* */ comments outside of string literals."""
    out = []
    i = 0
    n = len(text)
    in_string = False
    while i < n:
        ch = text[i]
        if in_string:
            out.append(ch)
            if ch == "\\" and i + 1 < n:
                out.append(text[i + 1])
                i += 2
                continue
            if ch == '"':
                in_string = False
            i += 1
        elif ch == '"':
            in_string = True
            out.append(ch)
            i += 1
        elif ch == "/" and i + 1 < n and text[i + 1] == "/":
            while i < n and text[i] != "\n":
                i += 1
        elif ch == "/" and i + 1 < n and text[i + 1] == "*":
            i += 2
            while i + 1 < n and not (text[i] == "*" and text[i + 1] == "/"):
                i += 1
            i += 2
        else:
            out.append(ch)
            i += 1
    return "".join(out)


def load_config(path: str | Path | None) -> ExperimentConfig:
    """Load a config file (JSON with comments) merged over defaults."""
    if path is None:
        return ExperimentConfig()
    text = Path(path).read_text()
    try:
        data = json.loads(strip_json_comments(text))
    except json.JSONDecodeError as exc:
        raise InvalidConfigError(f"config {path} is not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise InvalidConfigError(f"config {path} must contain a JSON object")
    return ExperimentConfig.from_dict(data)
