import logging
from dataclasses import dataclass

import numpy as np
from scipy.stats import norm

from app.errors import ContractError, InferenceError
from app.models.forest import Forest
from app.schemas.effect import VarianceEstimate
from app.utils import seeding

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ClusterIndex:
    labels: np.ndarray
    codes: np.ndarray

    @classmethod
    def from_labels(cls, clusters) -> "ClusterIndex":
        labels, codes = np.unique(np.asarray(clusters).astype(str), return_inverse=True)
        return cls(labels=labels, codes=codes.astype(np.int64))

    @property
    def n_clusters(self) -> int:
        return len(self.labels)

    def rows(self) -> dict[str, np.ndarray]:
        return {str(label): np.flatnonzero(self.codes == code) for code, label in enumerate(self.labels)}

    def sums(self, values: np.ndarray) -> np.ndarray:
        return np.bincount(self.codes, weights=values, minlength=self.n_clusters)


def weighted_mean(scores: np.ndarray, weights: np.ndarray) -> float:
    return float(np.dot(weights, scores) / weights.sum())


def cluster_variance(scores, weights, clusters, tau_hat: float | None = None, allow_unclustered: bool = False) -> VarianceEstimate:
    """Sandwich variance of the weighted mean of ``scores``.

    Cluster sums of ``w_i * (score_i - tau_hat)`` are treated as independent;
    the G/(G-1) small-cluster correction is always applied.
    """
    scores = np.asarray(scores, dtype=float)
    weights = np.asarray(weights, dtype=float)
    index = ClusterIndex.from_labels(clusters)
    if index.n_clusters < 2:
        if not allow_unclustered:
            raise InferenceError(
                "cluster variance needs at least 2 clusters; request the unclustered fallback explicitly"
            )
        logger.warning("single cluster: falling back to row-level variance")
        index = ClusterIndex.from_labels(np.arange(len(scores)))
    if tau_hat is None:
        tau_hat = weighted_mean(scores, weights)
    cluster_sums = index.sums(weights * (scores - tau_hat))
    n_clusters = index.n_clusters
    value = n_clusters / (n_clusters - 1) * np.dot(cluster_sums, cluster_sums) / weights.sum() ** 2
    return VarianceEstimate(value=float(value), method="cluster_sandwich", n_clusters=n_clusters)


def cluster_bootstrap(scores, weights, clusters, n_boot: int, seed: int) -> np.ndarray:
    """Weighted-mean estimates over ``n_boot`` cluster resamples drawn with replacement."""
    scores = np.asarray(scores, dtype=float)
    weights = np.asarray(weights, dtype=float)
    index = ClusterIndex.from_labels(clusters)
    if index.n_clusters < 2:
        raise InferenceError("cluster bootstrap needs at least 2 clusters")
    weighted_scores = index.sums(weights * scores)
    weight_sums = index.sums(weights)
    rng = seeding.stream(seed, seeding.BOOTSTRAP)
    draws = rng.integers(0, index.n_clusters, size=(n_boot, index.n_clusters))
    multiplicity = np.zeros((n_boot, index.n_clusters))
    np.add.at(multiplicity, (np.repeat(np.arange(n_boot), index.n_clusters), draws.ravel()), 1.0)
    denominators = multiplicity @ weight_sums
    with np.errstate(invalid="ignore", divide="ignore"):
        return (multiplicity @ weighted_scores) / denominators


def bootstrap_variance(replicates: np.ndarray, n_clusters: int) -> VarianceEstimate:
    finite = replicates[np.isfinite(replicates)]
    return VarianceEstimate(value=float(np.var(finite, ddof=1)), method="cluster_bootstrap", n_clusters=n_clusters)


def _group_statistics(block: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    present = ~np.isnan(block)
    counts = present.sum(axis=0)
    filled = np.where(present, block, 0.0)
    means = np.full(block.shape[1], np.nan)
    seen = counts > 0
    means[seen] = filled.sum(axis=0)[seen] / counts[seen]
    deviations = np.where(present, block - means, 0.0)
    noise = np.full(block.shape[1], np.nan)
    enough = counts > 1
    # within-group variance of the group mean
    noise[enough] = (deviations**2).sum(axis=0)[enough] / (counts[enough] - 1) / counts[enough]
    return means, noise


def little_bags_variance(forest: Forest, X, oob: bool = True) -> np.ndarray:
    """Per-row variance of forest predictions from little-bags tree groups.

    Between-group variance of the group-mean predictions, minus the average
    within-group variance of a group mean; floored at zero. With ``oob`` a
    tree only contributes to rows outside its bag; rows left with fewer than
    two groups fall back to all trees.
    """
    config = forest.config
    if config.n_groups < 2 or config.ci_group_size < 2:
        raise InferenceError(
            f"little-bags variance needs >= 2 groups of >= 2 trees (n_trees={config.n_trees}, "
            f"ci_group_size={config.ci_group_size})"
        )
    X = forest.check_layout(X)
    variance = _bags_variance(forest, forest.tree_predictions(X, oob=oob))
    missing = np.isnan(variance)
    if oob and missing.any():
        logger.warning("little bags: %d rows lack two out-of-bag groups, using all trees", int(missing.sum()))
        variance[missing] = _bags_variance(forest, forest.tree_predictions(X[missing]))
    return variance


def _bags_variance(forest: Forest, predictions: np.ndarray) -> np.ndarray:
    # shift-invariant: centre every row on its first available tree prediction
    present = ~np.isnan(predictions)
    reference = predictions[present.argmax(axis=0), np.arange(predictions.shape[1])]
    predictions = predictions - np.where(np.isnan(reference), 0.0, reference)
    groups = np.array([tree.group for tree in forest.trees])
    n_groups = forest.config.n_groups
    means = np.empty((n_groups, predictions.shape[1]))
    noise = np.empty((n_groups, predictions.shape[1]))
    for group in range(n_groups):
        means[group], noise[group] = _group_statistics(predictions[groups == group])

    valid = ~np.isnan(means)
    n_valid = valid.sum(axis=0)
    out = np.full(predictions.shape[1], np.nan)
    usable = n_valid >= 2
    if not usable.any():
        return out
    grand = np.where(valid, means, 0.0).sum(axis=0)[usable] / n_valid[usable]
    between = (np.where(valid[:, usable], means[:, usable] - grand, 0.0) ** 2).sum(axis=0) / n_valid[usable]
    noise_ok = ~np.isnan(noise[:, usable])
    n_noise = np.maximum(noise_ok.sum(axis=0), 1)
    within = np.where(noise_ok, noise[:, usable], 0.0).sum(axis=0) / n_noise
    out[usable] = np.maximum(between - within, 0.0)
    return out


def confidence_interval(tau_hat: float, variance: float, level: float = 0.95) -> tuple[float, float]:
    if not 0 < level < 1:
        raise ContractError(f"confidence level must lie in (0, 1), got {level}")
    if variance < 0 or not np.isfinite(variance):
        raise ContractError(f"variance must be finite and non-negative, got {variance}")
    half_width = norm.ppf((1 + level) / 2) * np.sqrt(variance)
    return float(tau_hat - half_width), float(tau_hat + half_width)
