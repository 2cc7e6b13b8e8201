from dataclasses import dataclass

import numpy as np
import pandas as pd

from app.models.forest import RegressionForest


@dataclass(frozen=True)
class PropensityModel:
    forest: RegressionForest | None
    oob_scores: np.ndarray
    clamp: tuple[float, float]


@dataclass(frozen=True)
class CateTable:
    child_ids: np.ndarray
    tau: np.ndarray
    variance: np.ndarray
    clusters: np.ndarray

    def __len__(self) -> int:
        return len(self.child_ids)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            {
                "child_id": self.child_ids,
                "tau_hat": self.tau,
                "variance": self.variance,
                "cluster": self.clusters,
            }
        )
