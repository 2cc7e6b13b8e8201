from dataclasses import dataclass

import numpy as np
import pandas as pd

from app.schemas.cohort import FEATURE_NAMES, Threshold

ID_COLUMNS = ("child_id", "country", "birth_year", "cluster", "y", "d")


@dataclass(frozen=True)
class CohortSample:
    """Threshold-specific analysis table in columnar form.

    Row ``i`` is (X[i], y[i], d[i], clusters[i], child_ids[i]); the cluster
    token is ``<country>-<birth year>``.
    """

    threshold: Threshold
    feature_names: tuple[str, ...]
    X: np.ndarray
    y: np.ndarray
    d: np.ndarray
    clusters: np.ndarray
    child_ids: np.ndarray
    countries: np.ndarray
    birth_years: np.ndarray

    def __len__(self) -> int:
        return len(self.child_ids)

    @property
    def n_treated(self) -> int:
        return int(self.d.sum())

    @property
    def n_control(self) -> int:
        return len(self) - self.n_treated

    def feature(self, name: str) -> np.ndarray:
        return self.X[:, self.feature_names.index(name)]

    def to_frame(self) -> pd.DataFrame:
        frame = pd.DataFrame(
            {
                "child_id": self.child_ids,
                "country": self.countries,
                "birth_year": self.birth_years.astype(np.int64),
                "cluster": self.clusters,
                "y": self.y.astype(np.int64),
                "d": self.d.astype(np.int64),
            }
        )
        features = pd.DataFrame(self.X, columns=list(self.feature_names))
        return pd.concat([frame, features], axis=1)

    @classmethod
    def from_frame(cls, threshold: Threshold, frame: pd.DataFrame) -> "CohortSample":
        feature_names = tuple(col for col in frame.columns if col not in ID_COLUMNS)
        return cls(
            threshold=Threshold(threshold),
            feature_names=feature_names,
            X=frame[list(feature_names)].to_numpy(dtype=float),
            y=frame["y"].to_numpy(dtype=float),
            d=frame["d"].to_numpy(dtype=float),
            clusters=frame["cluster"].astype(str).to_numpy(dtype=object),
            child_ids=frame["child_id"].astype(str).to_numpy(dtype=object),
            countries=frame["country"].astype(str).to_numpy(dtype=object),
            birth_years=frame["birth_year"].to_numpy(dtype=np.int64),
        )

    @classmethod
    def empty(cls, threshold: Threshold) -> "CohortSample":
        return cls(
            threshold=Threshold(threshold),
            feature_names=FEATURE_NAMES,
            X=np.empty((0, len(FEATURE_NAMES))),
            y=np.empty(0),
            d=np.empty(0),
            clusters=np.empty(0, dtype=object),
            child_ids=np.empty(0, dtype=object),
            countries=np.empty(0, dtype=object),
            birth_years=np.empty(0, dtype=np.int64),
        )
