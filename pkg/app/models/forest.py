import logging
from dataclasses import dataclass, field

import numpy as np

from app.errors import ContractError
from app.models.tree import Tree
from app.schemas.forest import ForestConfig

logger = logging.getLogger(__name__)


@dataclass
class Forest:
    trees: list[Tree]
    config: ForestConfig
    feature_names: list[str]
    cluster_labels: np.ndarray
    row_clusters: np.ndarray

    @property
    def n_features(self) -> int:
        return len(self.feature_names)

    @property
    def n_train(self) -> int:
        return len(self.row_clusters)

    def check_layout(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.ndim != 2 or X.shape[1] != self.n_features:
            raise ContractError(
                f"expected {self.n_features} features {self.feature_names}, got array of shape {X.shape}"
            )
        return X

    def tree_predictions(self, X: np.ndarray, oob: bool = False) -> np.ndarray:
        """Per-tree predictions, shape (n_trees, n_rows).

        With ``oob`` the rows in a tree's bag are masked with NaN; ``X`` must
        then be the training matrix.
        """
        X = self.check_layout(X)
        if oob and X.shape[0] != self.n_train:
            raise ContractError(f"out-of-bag prediction needs the {self.n_train} training rows")
        out = np.empty((len(self.trees), X.shape[0]))
        for index, tree in enumerate(self.trees):
            out[index] = tree.predict(X)
            if oob:
                out[index, tree.in_bag_mask(X.shape[0])] = np.nan
        return out

    def _average(self, X: np.ndarray, oob: bool) -> np.ndarray:
        X = self.check_layout(X)
        n_rows = X.shape[0]
        totals = np.zeros(n_rows)
        counts = np.zeros(n_rows, dtype=np.int64)
        for tree in self.trees:
            pred = tree.predict(X)
            usable = ~np.isnan(pred)
            if oob:
                usable &= ~tree.in_bag_mask(n_rows)
            totals[usable] += pred[usable]
            counts[usable] += 1
        out = np.full(n_rows, np.nan)
        seen = counts > 0
        out[seen] = totals[seen] / counts[seen]
        return out

    def predict(self, X: np.ndarray) -> np.ndarray:
        return self._average(X, oob=False)

    def predict_oob(self, X: np.ndarray) -> np.ndarray:
        """Average over trees whose bag excludes the row; NaN when every tree saw it."""
        if np.asarray(X).shape[0] != self.n_train:
            raise ContractError(f"out-of-bag prediction needs the {self.n_train} training rows")
        return self._average(X, oob=True)


@dataclass
class RegressionForest(Forest):
    targets: np.ndarray = field(default_factory=lambda: np.empty(0))


@dataclass
class CausalForest(Forest):
    centering_outcome: RegressionForest | None = None
    centering_treatment: RegressionForest | None = None
    outcome: np.ndarray = field(default_factory=lambda: np.empty(0))
    treatment: np.ndarray = field(default_factory=lambda: np.empty(0))
    outcome_hat: np.ndarray = field(default_factory=lambda: np.empty(0))
    treatment_hat: np.ndarray = field(default_factory=lambda: np.empty(0))

    @property
    def outcome_residuals(self) -> np.ndarray:
        return self.outcome - self.outcome_hat

    @property
    def treatment_residuals(self) -> np.ndarray:
        return self.treatment - self.treatment_hat
