from enum import Enum
from typing import Optional

from pydantic import BaseModel, ConfigDict, Field, model_validator

CMC_EPOCH_YEAR = 1900


def cmc_year(cmc: int) -> int:
    return CMC_EPOCH_YEAR + (cmc - 1) // 12


def to_cmc(year: int, month: int = 1) -> int:
    return (year - CMC_EPOCH_YEAR) * 12 + month


class Sex(str, Enum):
    female = "F"
    male = "M"


class Residence(str, Enum):
    urban = "urban"
    rural = "rural"


class ChildRecord(BaseModel):
    """One child's birth and death history with mother and household data.

    Field aliases are the ``children.csv`` column names.
    """

    model_config = ConfigDict(frozen=True, populate_by_name=True, extra="forbid")

    child_id: str = Field(..., min_length=1)
    country: str = Field(..., min_length=1, max_length=64)
    birth_month: int = Field(..., ge=1, alias="birth_cmc")
    survey_year: int = Field(..., ge=CMC_EPOCH_YEAR, le=9999)
    died: bool
    age_at_death_months: Optional[int] = Field(None, ge=0)
    sex: Sex
    mother_age_at_birth: float = Field(..., ge=10, le=60, alias="mother_age")
    mother_education: int = Field(..., ge=0, le=3, alias="mother_edu")
    residence: Residence
    birth_order: int = Field(..., ge=1)
    multiple_birth: bool

    @model_validator(mode="after")
    def check_history(self) -> "ChildRecord":
        if self.died and self.age_at_death_months is None:
            raise ValueError("died=1 requires age_at_death_months")
        if not self.died and self.age_at_death_months is not None:
            raise ValueError("age_at_death_months given for a surviving child")
        if cmc_year(self.birth_month) > self.survey_year:
            raise ValueError(
                f"birth year {cmc_year(self.birth_month)} is after survey year {self.survey_year}"
            )
        return self

    @property
    def birth_year(self) -> int:
        return cmc_year(self.birth_month)

    @property
    def cluster(self) -> str:
        return f"{self.country}-{self.birth_year}"


class CrisisEvent(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    country: str = Field(..., min_length=1, max_length=64)
    year: int = Field(..., ge=CMC_EPOCH_YEAR, le=9999)


class CountryYearCovariates(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    country: str = Field(..., min_length=1, max_length=64)
    year: int = Field(..., ge=CMC_EPOCH_YEAR, le=9999)
    gdp_per_capita: float = Field(..., gt=0)
    population: float = Field(..., gt=0)


class RowIssue(BaseModel):
    row_number: int
    key: Optional[str] = None
    message: str


class ExclusionRecord(BaseModel):
    child_id: str
    threshold: str
    reason: str
