"""
Configuration: process-wide defaults from the environment and the
validated description of one experiment.
"""

import json
import logging
import math
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Union

from pydantic import BaseModel, Field, field_validator, model_validator
from pydantic_settings import BaseSettings, SettingsConfigDict

from .environment import ConductanceLaw

logger = logging.getLogger(__name__)


class Settings(BaseSettings):
    """Defaults read from OHMSTAT_* variables or a local .env file"""

    model_config = SettingsConfigDict(env_prefix="OHMSTAT_", env_file=".env", extra="ignore")

    threads: int = Field(default=1, ge=1)
    tol: float = Field(default=1e-10, gt=0)
    quadrature_nodes: int = Field(default=16, ge=1)
    log_level: str = "WARNING"

    @field_validator("log_level")
    @classmethod
    def _known_level(cls, value: str) -> str:
        value = value.upper()
        if value not in ("DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"):
            raise ValueError(f"unknown log level {value!r}")
        return value


def get_settings() -> Settings:
    return Settings()


class ExperimentConfig(BaseModel):
    """One Monte Carlo experiment over one or more box sides"""

    d: int = Field(default=2, ge=1, le=3)
    sides: List[int] = Field(default_factory=lambda: [8])
    lam: float = Field(default=0.5, gt=0, le=1)
    law: Literal["constant", "uniform", "two_point"] = "uniform"
    p: float = Field(default=0.5, ge=0, le=1)
    a: float = Field(default=1.0, gt=0)
    t: List[float] = Field(default_factory=lambda: [1.0])
    replicas: int = Field(default=100, ge=1)
    seed: int = Field(default=0, ge=0)
    tol: float = Field(default=1e-10, gt=0)
    out: Optional[Path] = None
    format: Literal["csv", "json"] = "csv"
    threads: int = Field(default=1, ge=1)
    quadrature_nodes: int = Field(default=16, ge=1)

    @field_validator("sides")
    @classmethod
    def _sides(cls, value: List[int]) -> List[int]:
        if not value:
            raise ValueError("at least one side is required")
        if any(L < 2 for L in value):
            raise ValueError(f"box sides must be >= 2, got {value}")
        return value

    @field_validator("t")
    @classmethod
    def _finite(cls, value: List[float]) -> List[float]:
        if not value or not all(math.isfinite(c) for c in value):
            raise ValueError(f"t must be a non-empty finite vector, got {value}")
        return value

    @model_validator(mode="after")
    def _broadcast_t(self) -> "ExperimentConfig":
        # a single value c stands for c * e_1
        if len(self.t) == 1 and self.d > 1:
            self.t = [self.t[0]] + [0.0] * (self.d - 1)
        if len(self.t) != self.d:
            raise ValueError(f"t has {len(self.t)} components, expected {self.d}")
        if self.law == "constant" and not self.lam <= self.a <= 1.0 / self.lam:
            raise ValueError(f"constant value {self.a} outside [{self.lam}, {1 / self.lam}]")
        return self

    def conductance_law(self) -> ConductanceLaw:
        if self.law == "constant":
            return ConductanceLaw("constant", self.lam, a=self.a)
        if self.law == "two_point":
            return ConductanceLaw.two_point(self.lam, self.p)
        return ConductanceLaw.uniform(self.lam, self.quadrature_nodes)

    @classmethod
    def from_file(cls, path: Union[str, Path], defaults: Optional[Dict[str, Any]] = None,
                  **overrides: Any) -> "ExperimentConfig":
        """Defaults, then the JSON file, then explicit overrides that are not None"""
        data: Dict[str, Any] = dict(defaults or {})
        data.update(json.loads(Path(path).read_text(encoding="utf-8")))
        data.update({k: v for k, v in overrides.items() if v is not None})
        logger.debug(f"experiment config from {path}: {data}")
        return cls(**data)
