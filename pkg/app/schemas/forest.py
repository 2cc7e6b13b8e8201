import math
from typing import Literal, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from app.config import settings

FOREST_FORMAT = "sdc-grf-forest"
FOREST_FORMAT_VERSION = 1


class ForestConfig(BaseModel):
    """Tuning of a forest. Defaults are echoed into every saved forest."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    n_trees: int = Field(2000, ge=1)
    subsample_fraction: float = Field(0.5, gt=0, le=1)
    honesty: bool = True
    honesty_fraction: float = Field(0.5, gt=0, lt=1)
    min_leaf_size: int = Field(5, ge=1)
    # each child keeps at least this share of its parent node (per arm in causal trees)
    alpha: float = Field(0.05, ge=0, lt=0.5)
    mtry: Optional[int] = Field(None, ge=1)
    max_depth: Optional[int] = Field(None, ge=0)
    seed: int = Field(settings.DEFAULT_SEED, ge=0, lt=2**64)
    cluster_aware: bool = True
    ci_group_size: int = Field(settings.CI_GROUP_SIZE, ge=1)
    importance_weighting: Literal["depth", "count"] = "depth"
    importance_max_depth: int = Field(4, ge=1)
    n_jobs: int = Field(settings.N_JOBS, exclude=True)

    @model_validator(mode="after")
    def check_groups(self) -> "ForestConfig":
        if self.n_trees % self.ci_group_size:
            raise ValueError(
                f"n_trees={self.n_trees} is not a multiple of ci_group_size={self.ci_group_size}"
            )
        if self.ci_group_size > 1 and self.subsample_fraction > 0.5:
            raise ValueError("subsample_fraction must be <= 0.5 when trees are grouped in little bags")
        return self

    def resolved_mtry(self, n_features: int) -> int:
        if self.mtry is None:
            return max(1, math.ceil(math.sqrt(n_features)))
        return min(self.mtry, n_features)

    @property
    def n_groups(self) -> int:
        return self.n_trees // self.ci_group_size


class SplitRule(BaseModel):
    model_config = ConfigDict(frozen=True)

    feature_index: int = Field(..., ge=0)
    cut_value: float

    def goes_left(self, values) -> np.ndarray:
        return np.asarray(values) <= self.cut_value


class TreeSchema(BaseModel):
    """Node arrays of one tree as stored on disk."""

    feature: list[int]
    threshold: list[Optional[float]]
    left: list[int]
    right: list[int]
    value: list[Optional[float]]
    depth: list[int]
    n_treated: list[int]
    n_control: list[int]
    split_ids: list[int]
    estimation_ids: list[int]
    bag_clusters: list[int]
    group: int


class RegressionForestSchema(BaseModel):
    config: ForestConfig
    feature_names: list[str]
    cluster_labels: list[str]
    row_clusters: list[int]
    targets: list[float] = []
    trees: list[TreeSchema]


class ForestFile(BaseModel):
    format: Literal["sdc-grf-forest"] = FOREST_FORMAT
    version: int = FOREST_FORMAT_VERSION
    kind: Literal["regression", "causal"]
    config_echo: dict
    feature_names: list[str]
    forest: RegressionForestSchema
    centering_outcome: Optional[RegressionForestSchema] = None
    centering_treatment: Optional[RegressionForestSchema] = None
    treatment: list[float] = []
    outcome: list[float] = []
    outcome_hat: list[float] = []
    treatment_hat: list[float] = []
