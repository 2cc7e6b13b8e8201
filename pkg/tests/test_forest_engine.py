import numpy as np
import pytest

from app import storage
from app.errors import ContractError, DegenerateForestWarning, EstimationError
from app.models.forest import RegressionForest
from app.models.tree import LEAF, Tree
from app.schemas.forest import ForestConfig
from app.services import forest_engine
from app.services.splitting import CausalCriterion, RegressionCriterion, find_best_split, residual_effect


def brute_force_split(X, y):
    best, best_gain = None, -np.inf
    n = len(y)
    for feature in range(X.shape[1]):
        values = np.unique(X[:, feature])
        for low, high in zip(values[:-1], values[1:]):
            cut = (low + high) / 2.0
            left = X[:, feature] <= cut
            n_left = int(left.sum())
            gain = y[left].sum() ** 2 / n_left + y[~left].sum() ** 2 / (n - n_left)
            if best is None or gain > best_gain + 1e-12 * abs(best_gain):
                best, best_gain = (feature, cut), gain
    return best


def test_split_search_matches_exhaustive_oracle():
    rng = np.random.default_rng(42)
    for _ in range(100):
        n = int(rng.integers(10, 201))
        p = int(rng.integers(1, 5))
        X = rng.integers(0, 20, size=(n, p)).astype(float)
        y = rng.integers(0, 6, size=n).astype(float)
        rows = np.arange(n)
        rule = find_best_split(X, rows, y, range(p), min_leaf=1)
        found = None if rule is None else (rule.feature_index, rule.cut_value)
        assert found == brute_force_split(X, y)


def test_depth_one_tree_matches_exhaustive_oracle():
    rng = np.random.default_rng(9)
    for _ in range(20):
        n = int(rng.integers(20, 201))
        X = rng.integers(0, 30, size=(n, 3)).astype(float)
        y = rng.integers(0, 4, size=n).astype(float)
        if np.unique(y).size < 2:
            continue
        config = ForestConfig(
            n_trees=1, ci_group_size=1, subsample_fraction=1.0, honesty=False, cluster_aware=False,
            min_leaf_size=1, alpha=0.0, mtry=3, max_depth=1, seed=1,
        )
        tree = forest_engine.fit_regression_forest(X, y, None, config).trees[0]
        assert (int(tree.feature[0]), float(tree.threshold[0])) == brute_force_split(X, y)


def test_split_respects_min_leaf_per_arm():
    X = np.arange(20, dtype=float).reshape(-1, 1)
    arms = np.array([1, 0] * 10)
    response = np.where(np.arange(20) < 3, 10.0, 0.0)
    rule = find_best_split(X, np.arange(20), response, [0], min_leaf=3, arms=arms)
    left = rule.goes_left(X[:, rule.feature_index])
    assert arms[left].sum() >= 3 and (1 - arms[left]).sum() >= 3


def test_residual_effect_recovers_slope():
    w = np.array([-0.5, 0.5, -0.5, 0.5])
    y = 0.2 + 0.3 * w
    assert residual_effect(y, w) == pytest.approx(0.3)
    assert np.isnan(residual_effect(y, np.zeros(4)))


def _leaf_payloads(tree, criterion, X):
    leaves = tree.apply(X[tree.estimation_ids])
    values = np.full(tree.n_nodes, np.nan)
    for leaf in tree.leaves:
        values[leaf] = criterion.leaf_value(tree.estimation_ids[leaves == leaf])
    return values[tree.leaves]


def test_regression_forest_honesty_and_partition(regression_data, small_forest_config):
    X, y, clusters = regression_data
    forest = forest_engine.fit_regression_forest(X, y, clusters, small_forest_config)
    criterion = RegressionCriterion(y)
    for tree in forest.trees:
        assert np.intersect1d(tree.split_ids, tree.estimation_ids).size == 0
        assert np.intersect1d(forest.row_clusters[tree.split_ids], forest.row_clusters[tree.estimation_ids]).size == 0
        np.testing.assert_array_equal(_leaf_payloads(tree, criterion, X), tree.value[tree.leaves])
        assert tree.n_control[tree.leaves].sum() == len(tree.estimation_ids)
        assert (tree.n_control[tree.leaves] >= small_forest_config.min_leaf_size).all()
        internal = tree.feature != LEAF
        assert (tree.left[internal] > 0).all() and (tree.right[internal] > 0).all()


def test_causal_forest_honesty(causal_data, small_forest_config):
    X, y, d, clusters = causal_data
    forest = forest_engine.fit_causal_forest(X, y, d, clusters, small_forest_config)
    criterion = CausalCriterion(forest.outcome_residuals, forest.treatment_residuals, d)
    for tree in forest.trees:
        np.testing.assert_array_equal(_leaf_payloads(tree, criterion, X), tree.value[tree.leaves])
        assert (tree.n_treated[tree.leaves] >= small_forest_config.min_leaf_size).all()
        assert (tree.n_control[tree.leaves] >= small_forest_config.min_leaf_size).all()


def test_little_bag_groups_share_a_half_sample(regression_data):
    X, y, clusters = regression_data
    config = ForestConfig(n_trees=12, ci_group_size=4, seed=3)
    forest = forest_engine.fit_regression_forest(X, y, clusters, config)
    n_clusters = len(forest.cluster_labels)
    for group in range(config.n_groups):
        members = [tree for tree in forest.trees if tree.group == group]
        assert len(members) == 4
        used = np.unique(np.concatenate([tree.bag_clusters for tree in members]))
        assert len(used) <= n_clusters // 2


def test_regression_forest_fits_step(regression_data, small_forest_config):
    X, y, clusters = regression_data
    forest = forest_engine.fit_regression_forest(X, y, clusters, small_forest_config)
    pred = forest_engine.predict(forest, np.array([[0.1, 0.5, 0.5], [0.9, 0.5, 0.5]]))
    assert pred[0] < 0.3
    assert pred[1] > 0.7


def test_oob_prediction_is_nan_for_rows_every_tree_saw(regression_data):
    X, y, clusters = regression_data
    config = ForestConfig(n_trees=1, ci_group_size=1, seed=5)
    forest = forest_engine.fit_regression_forest(X, y, clusters, config)
    oob = forest_engine.predict_oob(forest, X)
    in_bag = forest.trees[0].in_bag_mask(len(X))
    assert np.isnan(oob[in_bag]).all()
    assert not np.isnan(oob[~in_bag]).any()


def test_causal_forest_recovers_constant_effect(causal_data, small_forest_config):
    X, y, d, clusters = causal_data
    forest = forest_engine.fit_causal_forest(X, y, d, clusters, small_forest_config)
    tau = forest_engine.predict_oob(forest, X)
    assert np.nanmean(tau) == pytest.approx(0.3, abs=0.1)
    assert np.mean(np.abs(forest.treatment_hat - 0.5)) < 0.2


def test_single_arm_sample_is_rejected(causal_data, small_forest_config):
    X, y, _, clusters = causal_data
    with pytest.raises(EstimationError, match="control"):
        forest_engine.fit_causal_forest(X, y, np.ones(len(y)), clusters, small_forest_config)


def test_constant_targets_warn(regression_data, small_forest_config):
    X, _, clusters = regression_data
    with pytest.warns(DegenerateForestWarning):
        forest = forest_engine.fit_regression_forest(X, np.ones(len(X)), clusters, small_forest_config)
    assert np.all(forest.predict(X) == 1.0)
    assert forest_engine.variable_importance(forest) == []


def test_feature_count_mismatch(regression_data, small_forest_config):
    X, y, clusters = regression_data
    forest = forest_engine.fit_regression_forest(X, y, clusters, small_forest_config)
    with pytest.raises(ContractError):
        forest.predict(X[:, :2])


def test_group_size_must_divide_tree_count():
    with pytest.raises(ValueError):
        ForestConfig(n_trees=15, ci_group_size=2)
    with pytest.raises(ValueError):
        ForestConfig(n_trees=10, ci_group_size=2, subsample_fraction=0.8)


@pytest.mark.parametrize("weighting", ["depth", "count"])
def test_importance_is_a_distribution_led_by_the_signal(regression_data, weighting):
    X, y, clusters = regression_data
    config = ForestConfig(n_trees=20, ci_group_size=2, seed=4, importance_weighting=weighting)
    ranking = forest_engine.variable_importance(forest_engine.fit_regression_forest(X, y, clusters, config))
    assert sum(weight for _, weight in ranking) == pytest.approx(1.0, abs=1e-9)
    if weighting == "depth":
        assert ranking[0][0] == "x0"
    assert [weight for _, weight in ranking] == sorted((weight for _, weight in ranking), reverse=True)


def test_fixed_seed_gives_identical_forest_files(tmp_path, causal_data, small_forest_config):
    X, y, d, clusters = causal_data
    serial = forest_engine.fit_causal_forest(X, y, d, clusters, small_forest_config)
    again = forest_engine.fit_causal_forest(X, y, d, clusters, small_forest_config)
    parallel = forest_engine.fit_causal_forest(X, y, d, clusters, small_forest_config.model_copy(update={"n_jobs": 2}))
    paths = [storage.save_forest(forest, tmp_path / f"f{i}.json") for i, forest in enumerate((serial, again, parallel))]
    contents = {path.read_bytes() for path in paths}
    assert len(contents) == 1


@pytest.mark.parametrize("name", ["forest.json", "forest.json.gz"])
def test_save_load_predict_is_bit_exact(tmp_path, causal_data, small_forest_config, name):
    X, y, d, clusters = causal_data
    forest = forest_engine.fit_causal_forest(X, y, d, clusters, small_forest_config)
    loaded = storage.load_forest(storage.save_forest(forest, tmp_path / name))
    np.testing.assert_array_equal(loaded.predict(X), forest.predict(X))
    np.testing.assert_array_equal(loaded.predict_oob(X), forest.predict_oob(X))
    np.testing.assert_array_equal(loaded.treatment_hat, forest.treatment_hat)
    np.testing.assert_array_equal(loaded.centering_outcome.predict(X), forest.centering_outcome.predict(X))
    assert loaded.config == forest.config


def stump(feature, threshold, left_value, right_value, bag, group=0) -> Tree:
    bag = np.asarray(bag, dtype=np.int64)
    return Tree(
        feature=np.array([feature, LEAF, LEAF]),
        threshold=np.array([threshold, np.nan, np.nan]),
        left=np.array([1, LEAF, LEAF]),
        right=np.array([2, LEAF, LEAF]),
        value=np.array([np.nan, left_value, right_value]),
        depth=np.array([0, 1, 1]),
        n_treated=np.zeros(3, dtype=np.int64),
        n_control=np.array([0, 1, 1]),
        split_ids=bag,
        estimation_ids=bag,
        bag_clusters=bag,
        group=group,
    )


def hand_forest(trees, n_rows, n_features=1) -> RegressionForest:
    return RegressionForest(
        trees=trees,
        config=ForestConfig(n_trees=len(trees), ci_group_size=1),
        feature_names=[f"x{i}" for i in range(n_features)],
        cluster_labels=np.array([str(i) for i in range(n_rows)], dtype=object),
        row_clusters=np.arange(n_rows),
    )


def test_oob_prediction_of_two_hand_built_trees():
    X = np.array([[0.0], [1.0], [2.0], [3.0]])
    forest = hand_forest([stump(0, 1.5, 0.0, 1.0, [0, 1]), stump(0, 1.5, 0.2, 0.8, [2, 3])], 4)
    np.testing.assert_allclose(forest_engine.predict_oob(forest, X), [0.2, 0.2, 1.0, 1.0])
    np.testing.assert_allclose(forest_engine.predict(forest, X), [0.1, 0.1, 0.9, 0.9])


def test_training_row_passed_as_new_data_uses_every_tree():
    X = np.array([[0.0], [1.0], [2.0], [3.0]])
    forest = hand_forest([stump(0, 1.5, 0.0, 1.0, [0, 1]), stump(0, 1.5, 0.2, 0.8, [2, 3])], 4)
    assert forest_engine.predict(forest, X[[0]])[0] == pytest.approx(0.1)
    assert forest_engine.predict_oob(forest, X)[0] == pytest.approx(0.2)


def test_importance_of_a_single_split_feature_is_one():
    forest = hand_forest([stump(3, 0.5, 0.0, 1.0, [i]) for i in range(6)], 6, n_features=5)
    ranking = forest_engine.variable_importance(forest)
    assert ranking[0] == ("x3", 1.0)
    assert all(weight == 0.0 for _, weight in ranking[1:])


def test_tied_features_go_to_the_lower_index():
    rng = np.random.default_rng(6)
    base = rng.uniform(size=60)
    X = np.column_stack([rng.uniform(size=60), 10.0 * base + 3.0, base])
    response = np.where(base > 0.4, 1.0, -1.0)
    rule = find_best_split(X, np.arange(60), response, [2, 1, 0], min_leaf=2)
    assert rule.feature_index == 1


def test_alpha_keeps_a_share_of_the_node_in_each_child():
    X = np.arange(40, dtype=float).reshape(-1, 1)
    response = np.where(np.arange(40) < 2, 50.0, 0.0)
    free = find_best_split(X, np.arange(40), response, [0], min_leaf=1)
    balanced = find_best_split(X, np.arange(40), response, [0], min_leaf=1, alpha=0.25)
    assert free.cut_value == 1.5
    left = balanced.goes_left(X[:, 0])
    assert 10 <= left.sum() <= 30


def test_bag_is_a_union_of_whole_clusters(causal_data, small_forest_config):
    X, y, _, clusters = causal_data
    forest = forest_engine.fit_regression_forest(X, y, clusters, small_forest_config)
    for tree in forest.trees:
        whole = np.flatnonzero(np.isin(forest.row_clusters, tree.bag_clusters))
        np.testing.assert_array_equal(tree.bag_ids, whole)


def test_oob_error_is_never_below_in_sample_error(regression_data):
    X, y, clusters = regression_data
    for seed in range(20):
        forest = forest_engine.fit_regression_forest(X, y, clusters, ForestConfig(n_trees=20, ci_group_size=2, seed=seed))
        oob = forest_engine.predict_oob(forest, X)
        seen = ~np.isnan(oob)
        in_sample = forest_engine.predict(forest, X)
        assert np.mean((oob[seen] - y[seen]) ** 2) >= np.mean((in_sample[seen] - y[seen]) ** 2)


def test_step_function_is_learned_out_of_bag():
    rng = np.random.default_rng(12)
    X = rng.uniform(-1, 1, size=(500, 1))
    y = (X[:, 0] > 0).astype(float)
    forest = forest_engine.fit_regression_forest(X, y, None, ForestConfig(n_trees=100, ci_group_size=2, seed=12))
    oob = forest_engine.predict_oob(forest, X)
    assert np.nanmean((oob - y) ** 2) < 0.05


def test_smooth_surface_is_tracked_out_of_bag():
    rng = np.random.default_rng(13)
    X = rng.uniform(size=(2000, 2))
    truth = np.sin(np.pi * X[:, 0]) + X[:, 1] ** 2
    y = truth + rng.normal(0, 0.2, 2000)
    forest = forest_engine.fit_regression_forest(X, y, None, ForestConfig(n_trees=50, ci_group_size=2, seed=13))
    oob = forest_engine.predict_oob(forest, X)
    seen = ~np.isnan(oob)
    assert np.corrcoef(oob[seen], truth[seen])[0, 1] > 0.8


def test_population_scale_moderator_leads_the_importance_ranking():
    rng = np.random.default_rng(14)
    n = 2000
    X = rng.uniform(size=(n, 4))
    X[:, 3] = 10.0 ** rng.uniform(5, 8, n)
    d = (rng.uniform(size=n) < 0.5).astype(float)
    tau = np.where(X[:, 3] > 2e7, 0.4, 0.0)
    y = 0.2 * X[:, 0] + tau * d + rng.normal(0, 0.1, n)
    clusters = np.array([f"g{i % 100}" for i in range(n)], dtype=object)
    config = ForestConfig(n_trees=40, ci_group_size=2, mtry=4, seed=14)
    forest = forest_engine.fit_causal_forest(X, y, d, clusters, config, ["x0", "x1", "x2", "pop"])
    assert forest_engine.variable_importance(forest)[0][0] == "pop"


@pytest.mark.slow
def test_more_trees_steady_the_mean_oob_prediction(regression_data):
    X, y, clusters = regression_data
    spread = {}
    for n_trees in (50, 2000):
        means = [
            np.nanmean(forest_engine.predict_oob(
                forest_engine.fit_regression_forest(X, y, clusters, ForestConfig(n_trees=n_trees, ci_group_size=2, seed=seed)), X
            ))
            for seed in range(8)
        ]
        spread[n_trees] = np.var(means, ddof=1)
    assert spread[2000] < spread[50]
