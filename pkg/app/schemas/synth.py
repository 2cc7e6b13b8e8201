from typing import Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, model_validator

from app.config import settings
from app.schemas.cohort import FEATURE_NAMES, INDICATOR_FEATURES, Threshold


class ModeratorSpec(BaseModel):
    """Effect shift for children whose covariate is switched on.

    Indicator covariates switch on at 1; any other covariate needs an
    ``above`` cut.
    """

    model_config = ConfigDict(frozen=True, extra="forbid")

    covariate: str
    effect_shift: float
    above: Optional[float] = None

    @model_validator(mode="after")
    def check_covariate(self) -> "ModeratorSpec":
        if self.covariate not in FEATURE_NAMES:
            raise ValueError(f"unknown covariate '{self.covariate}'; expected one of {list(FEATURE_NAMES)}")
        if self.above is None and self.covariate not in INDICATOR_FEATURES:
            raise ValueError(f"covariate '{self.covariate}' is not an indicator and needs an 'above' cut")
        return self


class DgpConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    n_countries: int = Field(8, ge=1)
    first_year: int = Field(1990, ge=1901)
    years_span: int = Field(5, ge=1, le=10)
    children_per_country_year: int = Field(50, ge=1)
    baseline_mortality: float = Field(0.08, ge=0, le=1)
    true_ate: Optional[float] = 0.13
    moderator_spec: list[ModeratorSpec] = []
    cluster_effect_sd: float = Field(0.01, ge=0)
    sdc_assignment: Literal["random_country_year", "gdp_dependent"] = "random_country_year"
    event_rate: float = Field(0.2, gt=0, lt=1)
    low_income_share: float = Field(0.5, ge=0, le=1)
    low_income_mortality_shift: float = 0.02
    threshold: Threshold = Threshold.u1
    seed: int = Field(settings.DEFAULT_SEED, ge=0, lt=2**64)

    @property
    def years(self) -> list[int]:
        return list(range(self.first_year, self.first_year + self.years_span))

    @property
    def n_children(self) -> int:
        return self.n_countries * self.years_span * self.children_per_country_year


class RepResult(BaseModel):
    rep: int
    seed: int
    true_ate: Optional[float] = None
    tau_hat: Optional[float] = None
    std_err: Optional[float] = None
    ci_low: Optional[float] = None
    ci_high: Optional[float] = None
    covered: Optional[bool] = None
    moderator_rank: Optional[int] = None
    moderator_effect: Optional[float] = None
    baseline_effect: Optional[float] = None
    n_modes: Optional[int] = None
    wall_seconds: float = 0.0
    failed: bool = False
    error: Optional[str] = None


class MonteCarloReport(BaseModel):
    n_reps: int
    n_failed: int
    level: float
    moderator: Optional[str] = None
    mean_true_ate: Optional[float] = None
    bias: Optional[float] = None
    rmse: Optional[float] = None
    coverage: Optional[float] = None
    moderator_top_rate: Optional[float] = None
    reps: list[RepResult]
