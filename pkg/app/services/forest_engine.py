import logging
import warnings

import numpy as np
from joblib import Parallel, delayed

from app.errors import ContractError, DegenerateForestWarning, EstimationError, ValidationError
from app.models.forest import CausalForest, Forest, RegressionForest
from app.models.tree import LEAF, Tree
from app.schemas.forest import ForestConfig
from app.services.splitting import CausalCriterion, RegressionCriterion, grow_tree
from app.utils import seeding

logger = logging.getLogger(__name__)


def encode_clusters(clusters, n_rows: int) -> tuple[np.ndarray, np.ndarray]:
    if clusters is None:
        labels = np.array([str(i) for i in range(n_rows)], dtype=object)
        return labels, np.arange(n_rows, dtype=np.int64)
    clusters = np.asarray(clusters).astype(str)
    if len(clusters) != n_rows:
        raise ContractError(f"{len(clusters)} cluster labels for {n_rows} rows")
    labels, codes = np.unique(clusters, return_inverse=True)
    return labels.astype(object), codes.astype(np.int64)


def _check_inputs(X, targets, config: ForestConfig) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim != 2:
        raise ContractError(f"covariate matrix must be 2-D, got shape {X.shape}")
    if len(targets) != X.shape[0]:
        raise ContractError(f"{len(targets)} targets for {X.shape[0]} covariate rows")
    if not np.isfinite(X).all():
        raise ValidationError("covariate matrix contains missing or non-finite values")
    if config.subsample_fraction * X.shape[0] < 2 * config.min_leaf_size:
        raise ValidationError(
            f"subsample of {config.subsample_fraction} x {X.shape[0]} rows cannot hold two leaves "
            f"of min_leaf_size={config.min_leaf_size}"
        )
    return X


def _units(row_clusters: np.ndarray, config: ForestConfig) -> np.ndarray:
    """Sampling unit of every row: its cluster, or the row itself."""
    if config.cluster_aware:
        return row_clusters
    return np.arange(len(row_clusters), dtype=np.int64)


def _half_sample(n_units: int, config: ForestConfig, group: int) -> np.ndarray:
    if config.ci_group_size == 1:
        return np.arange(n_units)
    rng = seeding.stream(config.seed, seeding.GROUP, group)
    return np.sort(rng.choice(n_units, size=max(1, n_units // 2), replace=False))


def draw_bag(
    units: np.ndarray, row_clusters: np.ndarray, config: ForestConfig, tree_index: int
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Split-half rows, estimation-half rows and bag cluster codes of one tree.

    Units (whole clusters when cluster-aware) are drawn without replacement
    from the tree's little-bags half-sample; honesty then divides the drawn
    units, not the rows, between the two halves.
    """
    n_units = int(units.max()) + 1
    group = tree_index // config.ci_group_size
    pool = _half_sample(n_units, config, group)
    rng = seeding.stream(config.seed, seeding.TREE, tree_index)
    size = min(len(pool), max(1, int(round(config.subsample_fraction * n_units))))
    drawn = np.sort(rng.choice(pool, size=size, replace=False))

    if config.honesty and len(drawn) >= 2:
        shuffled = rng.permutation(drawn)
        n_split = min(len(drawn) - 1, max(1, int(round(config.honesty_fraction * len(drawn)))))
        split_units = np.sort(shuffled[:n_split])
        est_units = np.sort(shuffled[n_split:])
        split_ids = np.flatnonzero(np.isin(units, split_units))
        est_ids = np.flatnonzero(np.isin(units, est_units))
    else:
        split_ids = est_ids = np.flatnonzero(np.isin(units, drawn))

    bag_rows = np.union1d(split_ids, est_ids)
    bag_clusters = np.unique(row_clusters[bag_rows])
    return split_ids, est_ids, bag_clusters


def _grow_one(X, criterion, units, row_clusters, config: ForestConfig, tree_index: int) -> Tree:
    split_ids, est_ids, bag_clusters = draw_bag(units, row_clusters, config, tree_index)
    rng = seeding.stream(config.seed, seeding.GROWTH, tree_index)
    tree = grow_tree(
        X,
        split_ids,
        est_ids,
        criterion,
        config,
        rng,
        bag_clusters,
        group=tree_index // config.ci_group_size,
    )
    logger.debug("tree %d: %d nodes, %d split rows, %d estimation rows", tree_index, tree.n_nodes, len(split_ids), len(est_ids))
    return tree


def _grow_trees(X, criterion, row_clusters, config: ForestConfig) -> list[Tree]:
    units = _units(row_clusters, config)
    return Parallel(n_jobs=config.n_jobs)(
        delayed(_grow_one)(X, criterion, units, row_clusters, config, index) for index in range(config.n_trees)
    )


def fit_regression_forest(X, targets, clusters, config: ForestConfig, feature_names=None) -> RegressionForest:
    targets = np.asarray(targets, dtype=float)
    X = _check_inputs(X, targets, config)
    if not np.isfinite(targets).all():
        raise ValidationError("regression targets contain non-finite values")
    labels, row_clusters = encode_clusters(clusters, X.shape[0])
    if np.unique(targets).size < 2:
        message = "targets are constant; forest will predict their mean"
        logger.warning(message)
        warnings.warn(message, DegenerateForestWarning, stacklevel=2)

    trees = _grow_trees(X, RegressionCriterion(targets), row_clusters, config)
    logger.info("regression forest: %d trees over %d rows x %d features", len(trees), X.shape[0], X.shape[1])
    return RegressionForest(
        trees=trees,
        config=config,
        feature_names=list(feature_names or [f"x{i}" for i in range(X.shape[1])]),
        cluster_labels=labels,
        row_clusters=row_clusters,
        targets=targets,
    )


def _oob_or_full(forest: RegressionForest, X: np.ndarray, name: str) -> np.ndarray:
    values = forest.predict_oob(X)
    missing = np.isnan(values)
    if missing.any():
        logger.warning("%s: %d rows have no out-of-bag trees, using full-forest predictions", name, int(missing.sum()))
        values[missing] = forest.predict(X[missing])
    return values


def fit_causal_forest(X, y, d, clusters, config: ForestConfig, feature_names=None) -> CausalForest:
    """Causal forest with local centering.

    Outcome and treatment are residualized on out-of-bag predictions of two
    nuisance regression forests; causal trees then split on the gradient
    pseudo-outcomes of the residual-on-residual effect.
    """
    y = np.asarray(y, dtype=float)
    d = np.asarray(d, dtype=float)
    X = _check_inputs(X, y, config)
    if len(d) != len(y):
        raise ContractError(f"{len(d)} treatment values for {len(y)} outcomes")
    if not np.isin(d, (0.0, 1.0)).all():
        raise ValidationError("treatment must be binary 0/1")
    if d.min() == d.max():
        arm = "control (d=0)" if d.min() == 1 else "treated (d=1)"
        raise EstimationError(f"sample has no {arm} rows")

    names = list(feature_names or [f"x{i}" for i in range(X.shape[1])])
    outcome_config = config.model_copy(update={"seed": seeding.child_seed(config.seed, seeding.NUISANCE_OUTCOME)})
    treatment_config = config.model_copy(update={"seed": seeding.child_seed(config.seed, seeding.NUISANCE_TREATMENT)})
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", DegenerateForestWarning)
        centering_outcome = fit_regression_forest(X, y, clusters, outcome_config, names)
        centering_treatment = fit_regression_forest(X, d, clusters, treatment_config, names)
    outcome_hat = _oob_or_full(centering_outcome, X, "outcome centering")
    treatment_hat = _oob_or_full(centering_treatment, X, "treatment centering")

    labels, row_clusters = encode_clusters(clusters, X.shape[0])
    criterion = CausalCriterion(y - outcome_hat, d - treatment_hat, d)
    trees = _grow_trees(X, criterion, row_clusters, config)
    logger.info("causal forest: %d trees, %d treated / %d control rows", len(trees), int(d.sum()), int(len(d) - d.sum()))
    return CausalForest(
        trees=trees,
        config=config,
        feature_names=names,
        cluster_labels=labels,
        row_clusters=row_clusters,
        centering_outcome=centering_outcome,
        centering_treatment=centering_treatment,
        outcome=y,
        treatment=d,
        outcome_hat=outcome_hat,
        treatment_hat=treatment_hat,
    )


def predict(forest: Forest, X) -> np.ndarray:
    return forest.predict(X)


def predict_oob(forest: Forest, X) -> np.ndarray:
    return forest.predict_oob(X)


def _depth_shares(forest: Forest) -> np.ndarray:
    max_depth = forest.config.importance_max_depth
    counts = np.zeros((max_depth, forest.n_features))
    for tree in forest.trees:
        internal = (tree.feature != LEAF) & (tree.depth < max_depth)
        np.add.at(counts, (tree.depth[internal], tree.feature[internal]), 1.0)
    per_depth = counts.sum(axis=1)
    used = per_depth > 0
    decay = 0.5 ** np.arange(max_depth)
    return (decay[used, None] * counts[used] / per_depth[used, None]).sum(axis=0)


def variable_importance(forest: Forest) -> list[tuple[str, float]]:
    """Split-frequency importance, weight-descending with a name tiebreak.

    ``depth`` mode turns the splits at each depth k < ``importance_max_depth``
    (root = 0) into per-feature shares summing to one and adds the levels up with
    weight 0.5**k. ``count`` mode counts every split once.
    """
    if forest.config.importance_weighting == "depth":
        totals = _depth_shares(forest)
    else:
        totals = np.zeros(forest.n_features)
        for tree in forest.trees:
            internal = tree.feature != LEAF
            totals += np.bincount(tree.feature[internal], minlength=forest.n_features)
    grand_total = totals.sum()
    if grand_total == 0:
        return []
    shares = totals / grand_total
    ranking = sorted(zip(forest.feature_names, shares.tolist()), key=lambda item: (-item[1], item[0]))
    return [(name, float(weight)) for name, weight in ranking]
