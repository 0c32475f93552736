"""Strict JSON experiment configs.

Unknown keys anywhere are rejected, and ``seed`` is required. Defaults
mirror the full-scale recipe (endpoint: lr 0.1, Nesterov momentum 0.9,
weight decay 5e-4, 200 epochs, batch 128; curve: 600 epochs, lr 0.015);
desk runs override them.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Literal, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .context import CorruptionSpec
from .models import ModelSpec, mlp_spec
from .sweep import default_t_grid
from .training import TrainConfig

__all__ = ["ConfigError", "ExperimentConfig", "load_config", "parse_config", "config_hash"]

EXPERIMENTS = ("pretrain", "bmc-risk", "bmc-longtail", "bmc-shift", "planar", "eval-sweep")


class ConfigError(ValueError):
    """Invalid config; ``fields`` lists the offending dotted paths."""

    def __init__(self, message: str, fields: list[str] | None = None):
        super().__init__(message)
        self.fields = fields or []


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class ModelCfg(_Strict):
    mlp: Optional[list[int]] = None
    layers: Optional[list[dict]] = None
    input_shape: Optional[list[int]] = None

    @model_validator(mode="after")
    def _one_form(self):
        if (self.mlp is None) == (self.layers is None):
            raise ValueError("give exactly one of 'mlp' (layer sizes) or 'layers' + 'input_shape'")
        if self.layers is not None and self.input_shape is None:
            raise ValueError("'layers' needs 'input_shape'")
        self.spec().output_shape()
        return self

    def spec(self) -> ModelSpec:
        if self.mlp is not None:
            return mlp_spec(self.mlp)
        return ModelSpec(self.layers, self.input_shape)


class DataCfg(_Strict):
    source: Literal["blobs", "idx"] = "blobs"
    # blobs
    classes: int = Field(4, ge=2)
    dims: int = Field(2, ge=1)
    samples_per_class: int = Field(200, ge=1)
    test_samples_per_class: int = Field(200, ge=1)
    spread: Union[float, list[float], list[list[float]]] = 1.0
    separation: float = 1.0
    centers: Optional[list[list[float]]] = None
    # idx
    train_images: Optional[str] = None
    train_labels: Optional[str] = None
    test_images: Optional[str] = None
    test_labels: Optional[str] = None
    val_fraction: float = Field(0.1, gt=0, lt=1)
    normalize: bool = True

    @model_validator(mode="after")
    def _paths(self):
        if self.source == "idx":
            missing = [k for k in ("train_images", "train_labels", "test_images", "test_labels") if getattr(self, k) is None]
            if missing:
                raise ValueError(f"idx source needs {missing}")
        return self


class OptimCfg(_Strict):
    epochs: int = Field(..., ge=0)
    batch_size: int = Field(128, ge=1)
    lr: float = Field(..., ge=0)
    momentum: float = Field(0.9, ge=0, lt=1)
    weight_decay: float = Field(5e-4, ge=0)
    nesterov: bool = True
    augment: bool = True

    def train_config(self, seed: int) -> TrainConfig:
        return TrainConfig(
            self.epochs, self.batch_size, self.lr, self.momentum, self.weight_decay, self.nesterov, self.augment, seed
        )


class CorruptionCfg(_Strict):
    corruption: Literal["gaussian-noise", "contrast"]
    gamma: float = Field(1.0, ge=0)

    def spec(self, stream: int = 0) -> CorruptionSpec:
        return CorruptionSpec(self.corruption, self.gamma, stream)


class ContextCfg(_Strict):
    beta: float = Field(5.0, ge=1)
    corruption: Literal["gaussian-noise", "contrast"] = "gaussian-noise"
    gamma: float = Field(1.0, ge=0)
    corruptions: list[CorruptionCfg] = Field(
        default_factory=lambda: [CorruptionCfg(corruption="gaussian-noise"), CorruptionCfg(corruption="contrast")]
    )
    # eval-sweep only: which reading of t to evaluate under
    kind: Optional[Literal["risk", "longtail", "shift", "none"]] = None

    @field_validator("corruptions")
    @classmethod
    def _pair(cls, v):
        if len(v) != 2:
            raise ValueError("planar experiments need exactly two corruptions")
        return v


class PlanarCfg(_Strict):
    lr: float = Field(0.01, ge=0)
    momentum: float = Field(0.9, ge=0, lt=1)
    weight_decay: float = Field(0.0, ge=0)
    nesterov: bool = True
    batch_size: int = Field(64, ge=1)
    steps_per_epoch: int = Field(1, ge=1)
    patience: int = Field(20, ge=1)
    max_epochs: int = Field(200, ge=1)
    points_per_step: int = Field(50, ge=1)


class EvalCfg(_Strict):
    grid_points: int = Field(21, ge=2)
    grid: Optional[list[float]] = None
    seed_offset: int = 1000

    @field_validator("grid")
    @classmethod
    def _in_unit(cls, v):
        if v is not None and (not v or any(not 0.0 <= t <= 1.0 for t in v)):
            raise ValueError("grid values must lie in [0, 1]")
        return v

    def t_grid(self):
        return default_t_grid(self.grid_points) if self.grid is None else [float(t) for t in self.grid]


class ExperimentConfig(_Strict):
    experiment: Literal["pretrain", "bmc-risk", "bmc-longtail", "bmc-shift", "planar", "eval-sweep"]
    seed: int
    output_dir: str
    model: ModelCfg
    data: DataCfg = DataCfg()
    context: ContextCfg = ContextCfg()
    pretrain: OptimCfg = OptimCfg(epochs=200, lr=0.1)
    bmc: OptimCfg = OptimCfg(epochs=600, lr=0.015)
    planar: PlanarCfg = PlanarCfg()
    endpoints_frozen: bool = False
    endpoint_init: Literal["pretrained", "random"] = "pretrained"
    eval: EvalCfg = EvalCfg()
    checkpoint: Optional[str] = None

    @model_validator(mode="after")
    def _checkpoint(self):
        if self.experiment == "eval-sweep" and self.checkpoint is None:
            raise ValueError("eval-sweep needs 'checkpoint'")
        return self

    def resolved(self) -> dict:
        return self.model_dump(mode="json")


def parse_config(obj: dict) -> ExperimentConfig:
    try:
        return ExperimentConfig.model_validate(obj)
    except ValidationError as exc:
        fields, lines = [], []
        for err in exc.errors():
            loc = ".".join(str(p) for p in err["loc"]) or "<root>"
            fields.append(loc)
            lines.append(f"{loc}: {err['msg']}")
        raise ConfigError("invalid config:\n  " + "\n  ".join(lines), fields) from None
    except ValueError as exc:
        raise ConfigError(f"invalid config: {exc}") from None


def load_config(path) -> ExperimentConfig:
    try:
        obj = json.loads(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read config ({exc.strerror})", ["<file>"]) from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: not valid JSON ({exc})", ["<json>"]) from None
    if not isinstance(obj, dict):
        raise ConfigError(f"{path}: top level must be an object", ["<root>"])
    return parse_config(obj)


def config_hash(cfg: ExperimentConfig) -> str:
    return hashlib.sha256(json.dumps(cfg.resolved(), sort_keys=True).encode()).hexdigest()[:16]
