"""Exact greedy split search and honest tree growth.

Both tree kinds share one criterion: a candidate cut is scored by
``S_L**2 / n_L + S_R**2 / n_R`` over a per-row response. For regression
trees the response is the target, which makes the score equivalent to the
reduction in within-child sum of squares. For causal trees it is the
gradient pseudo-outcome of the node's residual-on-residual effect.
"""
import math

import numpy as np

from app.models.tree import LEAF, Tree
from app.schemas.forest import ForestConfig, SplitRule

# gains closer than this (relative) are ties, so summation order cannot pick the winner
GAIN_TOLERANCE = 1e-12


def residual_effect(outcome_residuals: np.ndarray, treatment_residuals: np.ndarray) -> float:
    """Residual-on-residual slope, the causal leaf payload."""
    if len(outcome_residuals) == 0:
        return np.nan
    w = treatment_residuals - treatment_residuals.mean()
    y = outcome_residuals - outcome_residuals.mean()
    denominator = np.dot(w, w)
    if denominator <= 0:
        return np.nan
    return float(np.dot(w, y) / denominator)


class RegressionCriterion:
    arms = None

    def __init__(self, targets: np.ndarray):
        self.targets = np.asarray(targets, dtype=float)

    def response(self, rows: np.ndarray, min_leaf: int) -> np.ndarray | None:
        values = self.targets[rows]
        if values.min() == values.max():
            return None
        return values

    def leaf_value(self, rows: np.ndarray) -> float:
        if len(rows) == 0:
            return np.nan
        values = self.targets[rows]
        # exact when every target is equal
        return float(values[0] + np.mean(values - values[0]))

    def leaf_counts(self, rows: np.ndarray) -> tuple[int, int]:
        return 0, len(rows)


class CausalCriterion:
    def __init__(self, outcome_residuals: np.ndarray, treatment_residuals: np.ndarray, treatment: np.ndarray):
        self.outcome_residuals = np.asarray(outcome_residuals, dtype=float)
        self.treatment_residuals = np.asarray(treatment_residuals, dtype=float)
        self.arms = np.asarray(treatment).astype(np.int64)

    def response(self, rows: np.ndarray, min_leaf: int) -> np.ndarray | None:
        treated = int(self.arms[rows].sum())
        if treated < 2 * min_leaf or len(rows) - treated < 2 * min_leaf:
            return None
        w = self.treatment_residuals[rows]
        y = self.outcome_residuals[rows]
        w = w - w.mean()
        y = y - y.mean()
        variance = np.dot(w, w) / len(rows)
        if variance <= 0:
            return None
        tau = np.dot(w, y) / np.dot(w, w)
        return w * (y - w * tau) / variance

    def leaf_value(self, rows: np.ndarray) -> float:
        return residual_effect(self.outcome_residuals[rows], self.treatment_residuals[rows])

    def leaf_counts(self, rows: np.ndarray) -> tuple[int, int]:
        treated = int(self.arms[rows].sum())
        return treated, len(rows) - treated


def _arms_ok(treated_left, n_left, treated_total, n_total, min_treated, min_control):
    control_left = n_left - treated_left
    treated_right = treated_total - treated_left
    control_right = (n_total - n_left) - treated_right
    return (
        (treated_left >= min_treated)
        & (control_left >= min_control)
        & (treated_right >= min_treated)
        & (control_right >= min_control)
    )


def _child_minimum(count, min_leaf: int, alpha: float) -> int:
    return max(min_leaf, math.ceil(alpha * count))


def find_best_split(
    X: np.ndarray,
    rows: np.ndarray,
    response: np.ndarray,
    features,
    min_leaf: int,
    estimation_rows: np.ndarray | None = None,
    arms: np.ndarray | None = None,
    alpha: float = 0.0,
) -> SplitRule | None:
    """Best cut over all midpoints of the given features.

    Ties go to the lowest feature index, then the lowest cut. Every child must
    keep ``min_leaf`` rows (of each arm when ``arms`` is given) in the split
    rows and, when given, in the estimation rows. ``alpha`` further asks each
    child for that share of the node's split rows (per arm for causal nodes).
    """
    n = len(rows)
    if n < 2:
        return None
    n_left = np.arange(1, n)
    n_right = n - n_left
    child_min = _child_minimum(n, min_leaf, alpha)
    if arms is not None:
        split_arms = arms[rows]
        treated_total = split_arms.sum()
        min_treated = _child_minimum(treated_total, min_leaf, alpha)
        min_control = _child_minimum(n - treated_total, min_leaf, alpha)
    if estimation_rows is not None:
        n_est = len(estimation_rows)
        if arms is not None:
            est_arms = arms[estimation_rows]
            est_treated_total = est_arms.sum()

    best_gain = -np.inf
    best = None
    for f in sorted(int(f) for f in features):
        x = X[rows, f]
        order = np.argsort(x, kind="stable")
        xs = x[order]
        cuts = (xs[:-1] + xs[1:]) / 2.0
        valid = (xs[:-1] < xs[1:]) & (cuts < xs[1:]) & (n_left >= child_min) & (n_right >= child_min)
        if arms is not None:
            treated_left = np.cumsum(split_arms[order])[:-1]
            valid &= _arms_ok(treated_left, n_left, treated_total, n, min_treated, min_control)
        if estimation_rows is not None and valid.any():
            xe = X[estimation_rows, f]
            est_order = np.argsort(xe, kind="stable")
            est_left = np.searchsorted(xe[est_order], cuts, side="right")
            valid &= (est_left >= min_leaf) & (n_est - est_left >= min_leaf)
            if arms is not None:
                est_cum = np.concatenate(([0], np.cumsum(est_arms[est_order])))
                valid &= _arms_ok(est_cum[est_left], est_left, est_treated_total, n_est, min_leaf, min_leaf)
        if not valid.any():
            continue
        ordered = response[order]
        left_sum = np.cumsum(ordered)[:-1]
        right_sum = ordered.sum() - left_sum
        gain = np.where(valid, left_sum**2 / n_left + right_sum**2 / n_right, -np.inf)
        top = gain.max()
        k = int(np.flatnonzero(gain >= top - GAIN_TOLERANCE * abs(top))[0])
        if best is None or gain[k] > best_gain + GAIN_TOLERANCE * abs(best_gain):
            best_gain = gain[k]
            best = SplitRule(feature_index=f, cut_value=float(cuts[k]))
    return best


def grow_tree(
    X: np.ndarray,
    split_ids: np.ndarray,
    estimation_ids: np.ndarray,
    criterion,
    config: ForestConfig,
    rng: np.random.Generator,
    bag_clusters: np.ndarray,
    group: int = 0,
) -> Tree:
    n_features = X.shape[1]
    mtry = config.resolved_mtry(n_features)
    min_leaf = config.min_leaf_size
    honest = not np.array_equal(split_ids, estimation_ids)

    nodes = {key: [] for key in ("feature", "threshold", "left", "right", "value", "depth", "n_treated", "n_control")}

    def new_node(depth: int) -> int:
        nodes["feature"].append(LEAF)
        nodes["threshold"].append(np.nan)
        nodes["left"].append(LEAF)
        nodes["right"].append(LEAF)
        nodes["value"].append(np.nan)
        nodes["depth"].append(depth)
        nodes["n_treated"].append(0)
        nodes["n_control"].append(0)
        return len(nodes["feature"]) - 1

    stack = [(new_node(0), split_ids, estimation_ids, 0)]
    while stack:
        node, rows, est_rows, depth = stack.pop()
        split = None
        if (config.max_depth is None or depth < config.max_depth) and len(rows) >= 2 * min_leaf:
            response = criterion.response(rows, min_leaf)
            if response is not None:
                features = rng.choice(n_features, size=mtry, replace=False)
                split = find_best_split(
                    X,
                    rows,
                    response,
                    features,
                    min_leaf,
                    estimation_rows=est_rows if honest else None,
                    arms=criterion.arms,
                    alpha=config.alpha,
                )
        if split is None:
            nodes["value"][node] = criterion.leaf_value(est_rows)
            nodes["n_treated"][node], nodes["n_control"][node] = criterion.leaf_counts(est_rows)
            continue

        left, right = new_node(depth + 1), new_node(depth + 1)
        nodes["feature"][node] = split.feature_index
        nodes["threshold"][node] = split.cut_value
        nodes["left"][node] = left
        nodes["right"][node] = right
        go_left = split.goes_left(X[rows, split.feature_index])
        est_left = split.goes_left(X[est_rows, split.feature_index])
        stack.append((right, rows[~go_left], est_rows[~est_left], depth + 1))
        stack.append((left, rows[go_left], est_rows[est_left], depth + 1))

    return Tree(
        feature=np.asarray(nodes["feature"], dtype=np.int64),
        threshold=np.asarray(nodes["threshold"], dtype=float),
        left=np.asarray(nodes["left"], dtype=np.int64),
        right=np.asarray(nodes["right"], dtype=np.int64),
        value=np.asarray(nodes["value"], dtype=float),
        depth=np.asarray(nodes["depth"], dtype=np.int64),
        n_treated=np.asarray(nodes["n_treated"], dtype=np.int64),
        n_control=np.asarray(nodes["n_control"], dtype=np.int64),
        split_ids=np.asarray(split_ids, dtype=np.int64),
        estimation_ids=np.asarray(estimation_ids, dtype=np.int64),
        bag_clusters=np.asarray(bag_clusters, dtype=np.int64),
        group=group,
    )
