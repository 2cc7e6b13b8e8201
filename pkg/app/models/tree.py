from dataclasses import dataclass

import numpy as np

LEAF = -1


@dataclass(frozen=True)
class Tree:
    """A fitted binary tree stored as flat node arrays.

    Node 0 is the root. Internal nodes have ``feature >= 0`` and send rows with
    ``x[feature] <= threshold`` left. Leaf ``value`` is the honest payload:
    a mean target (regression) or a residual-on-residual effect (causal),
    computed from estimation-half rows only. ``n_treated`` / ``n_control``
    count the estimation rows of each arm in a leaf (regression leaves keep
    every row under ``n_control``).
    """

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    depth: np.ndarray
    n_treated: np.ndarray
    n_control: np.ndarray
    split_ids: np.ndarray
    estimation_ids: np.ndarray
    bag_clusters: np.ndarray
    group: int = 0

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    @property
    def leaves(self) -> np.ndarray:
        return np.flatnonzero(self.feature == LEAF)

    @property
    def bag_ids(self) -> np.ndarray:
        return np.union1d(self.split_ids, self.estimation_ids)

    def apply(self, X: np.ndarray) -> np.ndarray:
        """Leaf index reached by every row of ``X``."""
        node = np.zeros(X.shape[0], dtype=np.int64)
        active = np.flatnonzero(self.feature[node] != LEAF)
        while active.size:
            current = node[active]
            go_left = X[active, self.feature[current]] <= self.threshold[current]
            node[active] = np.where(go_left, self.left[current], self.right[current])
            active = active[self.feature[node[active]] != LEAF]
        return node

    def predict(self, X: np.ndarray) -> np.ndarray:
        return self.value[self.apply(X)]

    def in_bag_mask(self, n_rows: int) -> np.ndarray:
        mask = np.zeros(n_rows, dtype=bool)
        mask[self.split_ids] = True
        mask[self.estimation_ids] = True
        return mask
