"""JSON experiment configuration: schema, line-anchored validation errors, digest."""
from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Literal, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .datasets import ROLES

METHODS = ("pfami_met", "pfami_nns", "prob_threshold", "min_distance", "mc_fraction",
           "random_proxy", "zero_perturbation", "mean_fluctuation")
SWEEP_AXES = ("epoch", "M", "N", "mechanism", "ablation")


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid")


class DataSection(_Section):
    kind: Literal["ring2d", "blobs-image"] = "blobs-image"
    counts: dict[str, int] = Field(default_factory=lambda: {r: 256 for r in ROLES})
    n_records: int | None = None
    side: int = Field(12, ge=8)
    noise: float = Field(0.3, ge=0.0)


class ModelSection(_Section):
    family: Literal["ddpm", "vae"] = "ddpm"
    hidden: int = Field(64, ge=1)
    depth: int = Field(2, ge=1)
    T: int = Field(100, ge=2)
    beta_start: float = 1e-3
    beta_end: float = 0.2
    emb_dim: int = Field(8, ge=2)
    sigma_data: float | None = 0.5
    latent_dim: int = Field(8, ge=1)


class TrainSection(_Section):
    epochs: int = Field(2000, ge=0)
    batch_size: int = Field(16, ge=1)
    lr: float = Field(1e-3, gt=0)
    weight_decay: float = Field(1e-2, ge=0)
    patience: int = Field(5, ge=1)
    smooth: int = Field(3, ge=1)
    eval_every: int = Field(25, ge=1)
    eval_draws: int = Field(4, ge=1)
    snapshot_every: int = Field(250, ge=1)


class ProxySection(_Section):
    steps: list[int] = Field(default_factory=lambda: list(range(5, 51, 5)))
    n_mc: int = Field(5, ge=1)
    n_outer: int = Field(4, ge=1)
    n_queries: int = Field(10, ge=1)
    calibrate: bool = False


class ScheduleSection(_Section):
    start: float = Field(0.9, gt=0, le=1)
    end: float = Field(0.9, gt=0, le=1)
    M: int = Field(1, ge=1)


class PerturbSection(_Section):
    kind: str = "crop"
    theta_max: float = 30.0
    centroid: list[float] | None = None
    direction: list[float] | None = None
    met: ScheduleSection = Field(default_factory=ScheduleSection)
    nns: ScheduleSection = Field(default_factory=lambda: ScheduleSection(start=0.98, end=0.7, M=10))


class AttackSection(_Section):
    methods: list[str] = Field(default_factory=lambda: ["pfami_met", "prob_threshold", "min_distance", "mc_fraction"])
    hidden: int = Field(64, ge=1)
    epochs: int = Field(300, ge=1)
    batch_size: int = Field(64, ge=1)
    lr: float = Field(1e-3, gt=0)
    weight_decay: float = Field(1e-2, ge=0)
    shadow_per_class: int = Field(200, ge=1)
    val_fraction: float = Field(0.25, ge=0.0, lt=1.0)
    n_bags: int = Field(5, ge=1)
    synthetic_size: int = Field(2048, ge=1)
    eps_radius: float | None = None

    @field_validator("methods")
    @classmethod
    def _known(cls, v):
        bad = [m for m in v if m not in METHODS]
        if bad:
            raise ValueError(f"unknown methods {bad}; choose from {list(METHODS)}")
        return v


class EvalSection(_Section):
    checkpoint: Union[Literal["marker", "last"], int] = "marker"
    sweep_methods: list[str] = Field(default_factory=lambda: ["pfami_met", "prob_threshold"])
    sweep_M: list[int] = Field(default_factory=lambda: [1, 2, 5, 10])
    sweep_N: list[int] = Field(default_factory=lambda: [1, 2, 5, 10])
    sweep_mechanisms: list[str] = Field(default_factory=lambda: ["crop", "rotation", "downsampling",
                                                                 "brightness", "contrast"])


class ExperimentConfig(_Section):
    seed: int = Field(..., ge=0, lt=2**64)
    data: DataSection = Field(default_factory=DataSection)
    model: ModelSection = Field(default_factory=ModelSection)
    train: TrainSection = Field(default_factory=TrainSection)
    proxy: ProxySection = Field(default_factory=ProxySection)
    perturb: PerturbSection = Field(default_factory=PerturbSection)
    attack: AttackSection = Field(default_factory=AttackSection)
    eval: EvalSection = Field(default_factory=EvalSection)

    @model_validator(mode="after")
    def _complete(self):
        if self.data.kind == "ring2d" and self.perturb.kind in ("crop", "rotation", "downsampling",
                                                                "brightness", "contrast"):
            raise ValueError("image perturbations need blobs-image data")
        if max(self.proxy.steps, default=0) > self.model.T or min(self.proxy.steps, default=0) < 2:
            raise ValueError(f"proxy steps must lie in [2, {self.model.T}]")
        return self

    def digest(self) -> str:
        blob = json.dumps(self.model_dump(mode="json"), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()

    def with_seed(self, seed: int | None) -> "ExperimentConfig":
        return self if seed is None else self.model_copy(update={"seed": int(seed)})


class ConfigError(ValueError):
    """Malformed configuration; the message starts with ``path:line:``."""


def _locate(text: str, loc) -> int:
    """Best-effort line of the innermost key of ``loc`` in the raw JSON text."""
    lines = text.splitlines()
    line = 0
    for key in loc:
        if not isinstance(key, str):
            continue
        needle = f'"{key}"'
        for i in range(line, len(lines)):
            if needle in lines[i]:
                line = i
                break
    return line + 1


def parse_config(text: str, source: str = "<config>") -> ExperimentConfig:
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"{source}:{e.lineno}: invalid JSON: {e.msg} (column {e.colno})") from None
    try:
        return ExperimentConfig.model_validate(raw)
    except ValidationError as e:
        err = e.errors()[0]
        where = ".".join(str(p) for p in err["loc"]) or "<root>"
        raise ConfigError(f"{source}:{_locate(text, err['loc'])}: {where}: {err['msg']}") from None


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as e:
        raise ConfigError(f"{path}:0: cannot read config: {e.strerror}") from None
    return parse_config(text, str(path))
