from pathlib import Path
from typing import Optional

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from app.config import settings
from app.schemas.cohort import ALL_THRESHOLDS, Threshold
from app.schemas.forest import ForestConfig


class InferenceSettings(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    level: float = Field(0.95, gt=0, lt=1)
    clamp_low: float = Field(settings.PROPENSITY_CLAMP_LOW, gt=0, lt=0.5)
    clamp_high: float = Field(settings.PROPENSITY_CLAMP_HIGH, gt=0.5, lt=1)
    allow_unclustered: bool = False
    bootstrap: bool = False
    bootstrap_reps: int = Field(settings.BOOTSTRAP_REPS, ge=2)
    hist_bins: int = Field(settings.HIST_BINS, ge=2)

    @property
    def clamp(self) -> tuple[float, float]:
        return self.clamp_low, self.clamp_high


class PipelineSettings(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    forest: ForestConfig = ForestConfig()
    inference: InferenceSettings = InferenceSettings()


class RunConfig(PipelineSettings):
    """Everything one CLI run needs; referenced files must exist up front."""

    children: Optional[Path] = None
    events: Optional[Path] = None
    covars: Optional[Path] = None
    thresholds: list[Threshold] = list(ALL_THRESHOLDS)
    low_income_cutoff: float = Field(settings.LOW_INCOME_GDP_CUTOFF, gt=0)
    out: Optional[Path] = None
    seed: int = Field(settings.DEFAULT_SEED, ge=0, lt=2**64)

    @field_validator("children", "events", "covars")
    @classmethod
    def check_exists(cls, path: Optional[Path]) -> Optional[Path]:
        if path is not None and not path.is_file():
            raise ValueError(f"file not found: {path}")
        return path

    @model_validator(mode="before")
    @classmethod
    def seed_forest(cls, data):
        # one top-level seed drives every random stream
        if isinstance(data, dict):
            forest = data.get("forest") or {}
            if isinstance(forest, BaseModel):
                forest = forest.model_dump()
            data = {**data, "forest": {**forest, "seed": data.get("seed", settings.DEFAULT_SEED)}}
        return data


class Manifest(BaseModel):
    tool: str = settings.APP_NAME
    version: str = settings.VERSION
    command: str
    config: dict
    environment: dict = Field(default_factory=settings.echo)
    inputs: dict[str, str] = {}
    outputs: list[str] = []
