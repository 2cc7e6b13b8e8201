from dataclasses import dataclass

import numpy as np
import pandas as pd


@dataclass(frozen=True)
class TruthBundle:
    """Ground truth of one synthetic draw.

    ``ate`` is the mean of ``tau`` over the generated children;
    ``propensity`` gives each country-year's crisis probability.
    """

    child_ids: np.ndarray
    tau: np.ndarray
    moderator_active: np.ndarray
    ate: float
    propensity: pd.DataFrame

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            {"child_id": self.child_ids, "tau": self.tau, "moderator_active": self.moderator_active.astype(np.int64)}
        )


@dataclass(frozen=True)
class SyntheticPanel:
    children: pd.DataFrame
    events: pd.DataFrame
    covariates: pd.DataFrame
    truth: TruthBundle
