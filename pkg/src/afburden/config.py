"""Run configuration shared by every CLI subcommand."""
from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

from .classical import LR_GRID, TREE_GRID
from .errors import ValidationError


@dataclass
class QualityConfig:
    window_size: int = 60
    agreement_window: float = 0.05
    bsqi_threshold: float = 0.8
    max_missing_seconds: float = 10.0
    min_beats: int = 1000
    max_missing_fraction: float = 0.25
    max_excluded_fraction: float = 0.75


@dataclass
class SeverityConfig:
    nonaf_max_af_seconds: float = 30.0
    mild_max_burden: float = 0.04
    moderate_max_burden: float = 0.80


@dataclass
class ClassicalConfig:
    cv: bool = True
    folds: int = 5
    lr_grid: dict = field(default_factory=lambda: {k: list(v) for k, v in LR_GRID.items()})
    tree_grid: dict = field(default_factory=lambda: {k: list(v) for k, v in TREE_GRID.items()})
    # used when cv is off
    lr_params: dict = field(default_factory=lambda: {"C": 1.0})
    tree_params: dict = field(default_factory=lambda: {"max_depth": 6, "n_estimators": 100})


@dataclass
class DeepConfig:
    n_filt: int = 64
    n_hid: int = 128
    h: int = 10
    gru_units: int = 16
    lr: float = 1e-3
    batch_size: int = 256
    epochs: int = 30
    patience: int = 5


@dataclass
class RunConfig:
    seed: int = 0
    test_fraction: float = 0.2
    validation_fraction: float = 0.2
    quality: QualityConfig = field(default_factory=QualityConfig)
    severity: SeverityConfig = field(default_factory=SeverityConfig)
    classical: ClassicalConfig = field(default_factory=ClassicalConfig)
    deep: DeepConfig = field(default_factory=DeepConfig)

    def __post_init__(self):
        q = self.quality
        positive = {"window_size": q.window_size, "agreement_window": q.agreement_window,
                    "bsqi_threshold": q.bsqi_threshold, "min_beats": q.min_beats,
                    "n_filt": self.deep.n_filt, "n_hid": self.deep.n_hid, "h": self.deep.h,
                    "gru_units": self.deep.gru_units, "lr": self.deep.lr,
                    "batch_size": self.deep.batch_size, "folds": self.classical.folds}
        bad = [k for k, v in positive.items() if not v > 0]
        if bad:
            raise ValidationError(f"config values must be positive: {', '.join(bad)}")
        if not 0 < self.test_fraction < 1 or not 0 < self.validation_fraction < 1:
            raise ValidationError("test_fraction and validation_fraction must be in (0, 1)")
        for name, grid in (("lr_grid", self.classical.lr_grid),
                           ("tree_grid", self.classical.tree_grid)):
            if not grid or any(len(v) == 0 for v in grid.values()):
                raise ValidationError(f"{name} must be non-empty")

    def to_dict(self) -> dict:
        return asdict(self)

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()[:12]

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        return _build(cls, data, "config")

    @classmethod
    def load(cls, path) -> "RunConfig":
        try:
            data = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ValidationError(f"{path}: invalid JSON ({exc.msg})") from None
        return cls.from_dict(data)


def _build(cls, data, where):
    if not isinstance(data, dict):
        raise ValidationError(f"{where}: expected an object")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - set(fields))
    if unknown:
        raise ValidationError(f"{where}: unknown keys {unknown}")
    kwargs = {}
    for name, value in data.items():
        sub = fields[name].default_factory if fields[name].default_factory is not dataclasses.MISSING else None
        if sub is not None and dataclasses.is_dataclass(sub):
            kwargs[name] = _build(sub, value, f"{where}.{name}")
        else:
            kwargs[name] = value
    return cls(**kwargs)
