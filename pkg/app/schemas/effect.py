from typing import Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, model_validator


class EffectEstimate(BaseModel):
    """Overlap-weighted average effect for one cohort threshold.

    ``std_err`` is the standard error of ``tau_hat``; ``cate_std`` is the
    dispersion of the per-child effects around it. They answer different
    questions and are reported side by side.
    """

    model_config = ConfigDict(extra="forbid")

    threshold: str
    tau_hat: float
    std_err: float = Field(..., ge=0)
    ci_low: float
    ci_high: float
    level: float = Field(0.95, gt=0, lt=1)
    n_treated: int = Field(..., ge=0)
    n_control: int = Field(..., ge=0)
    estimator: Literal["overlap_aipw"] = "overlap_aipw"
    cate_std: Optional[float] = None
    group: Optional[str] = None
    config_echo: dict = {}

    @model_validator(mode="after")
    def check_interval(self) -> "EffectEstimate":
        if not self.ci_low <= self.tau_hat <= self.ci_high:
            raise ValueError(f"interval ({self.ci_low}, {self.ci_high}) does not contain {self.tau_hat}")
        return self


class VarianceEstimate(BaseModel):
    model_config = ConfigDict(frozen=True)

    value: float = Field(..., ge=0, allow_inf_nan=False)
    method: Literal["cluster_sandwich", "little_bags", "cluster_bootstrap"]
    n_clusters: int = Field(..., ge=0)

    @property
    def std_err(self) -> float:
        return self.value**0.5


class HistogramSummary(BaseModel):
    bin_edges: list[float] = []
    counts: list[int] = []
    mean_marker: Optional[float] = None
    zero_marker: float = 0.0

    @property
    def is_empty(self) -> bool:
        return not self.counts

    def rows(self) -> list[dict]:
        return [
            {"bin_low": low, "bin_high": high, "count": count}
            for low, high, count in zip(self.bin_edges[:-1], self.bin_edges[1:], self.counts)
        ]
