"""Experiment configuration: one JSON document validated by pydantic."""

from __future__ import annotations

import pathlib
from fractions import Fraction
from typing import List, Literal, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from mini_udc.core.model import DistortionMeasure, SourceDistribution, exact_value, normalize_distortion
from mini_udc.errors import ConfigError, UdcError

Numeric = Union[str, int, float]
CodecName = Literal["t1", "t2", "nml"]


class ExperimentConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    codecs: List[CodecName] = Field(default_factory=lambda: ["t2", "nml"])
    p: List[Numeric]
    rho: List[List[Numeric]]
    rho_max: Optional[Numeric] = None
    d: Numeric
    n_grid: List[int] = Field(default_factory=list)
    trials: int = Field(default=1000, ge=1)
    seed: int = Field(default=0, ge=0, lt=2**64)
    out: Optional[str] = None
    # containers record cap in u32 with 0 reserved for the default
    cap: Optional[int] = Field(default=None, ge=1, lt=2**32)
    tol: float = Field(default=1e-9, gt=0)

    @field_validator("n_grid")
    @classmethod
    def _grid_points(cls, v: List[int]) -> List[int]:
        if any(n < 2 for n in v):
            raise ValueError("every blocklength in n_grid must be at least 2")
        return v

    @field_validator("d")
    @classmethod
    def _positive_level(cls, v: Numeric) -> Numeric:
        ex = exact_value(v) if not isinstance(v, float) else None
        if (ex if ex is not None else v) <= 0:
            raise ValueError("d must be positive")
        return v

    @model_validator(mode="after")
    def _consistent(self) -> "ExperimentConfig":
        try:
            src = self.source()
            rho = self.measure()
        except UdcError as e:
            raise ValueError(str(e)) from e
        if src.J != rho.J:
            raise ValueError(f"p has {src.J} symbols but rho has {rho.J} rows")
        return self

    def source(self) -> SourceDistribution:
        return SourceDistribution.from_values(self.p)

    def measure(self) -> DistortionMeasure:
        rho, _ = normalize_distortion(self.rho, rho_max=self.rho_max)
        return rho

    @property
    def level(self) -> Union[Fraction, float]:
        """d as an exact Fraction for decimal strings, else a float."""
        ex = exact_value(self.d) if not isinstance(self.d, float) else None
        return ex if ex is not None else float(self.d)

    def with_overrides(self, seed: Optional[int] = None, out: Optional[str] = None) -> "ExperimentConfig":
        update = {k: v for k, v in (("seed", seed), ("out", out)) if v is not None}
        if not update:
            return self
        try:
            return self.model_validate({**self.model_dump(), **update})
        except ValidationError as e:
            raise ConfigError(str(e)) from e


def parse_config(text: str) -> ExperimentConfig:
    try:
        return ExperimentConfig.model_validate_json(text)
    except ValidationError as e:
        raise ConfigError(str(e)) from e


def load_config(path: Union[str, pathlib.Path]) -> ExperimentConfig:
    try:
        text = pathlib.Path(path).read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e
    return parse_config(text)


REFERENCE_CONFIG = ExperimentConfig(
    codecs=["t2", "nml"],
    p=["0.5", "0.5"],
    rho=[["0", "1"], ["1", "0"]],
    d="0.1",
    n_grid=[8, 12, 16, 20, 24],
    trials=10_000,
    seed=0,
)
