import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import scramble
from rfassign.data import Dataset, MechanismSpec, apply_mechanism, gen_friedman1
from rfassign.forest import (
    Forest,
    ForestParams,
    Internal,
    Leaf,
    Tree,
    build_tree,
    leaf_membership,
    load_forest,
    predict_complete,
    predict_with_missing,
    proximity_matrix,
    save_forest,
    train_forest,
    variable_importance,
)

SMALL = ForestParams(n_trees=10, seed=3)


def stump(miss_left, miss_right, values=(5.0, 0.0, 10.0), position=0.5):
    """One cut on feature 0 with hand-set missing counts."""
    return Tree(
        feature=np.array([0, -1, -1]), position=np.array([position, 0.0, 0.0]),
        left=np.array([1, -1, -1]), right=np.array([2, -1, -1]),
        miss_left=np.array([miss_left, 0, 0]), miss_right=np.array([miss_right, 0, 0]),
        n_samples=np.array([4, 2, 2]), value=np.array(values, dtype=float),
        gain=np.array([1.0, 0.0, 0.0]), threshold=np.zeros(3, dtype=np.int64),
        low_left=np.ones(3, dtype=bool), bag=np.arange(4), leaf_of_bag=np.array([1, 1, 2, 2]),
    )


def forest_of(*trees, p=1, n_train=4):
    return Forest(tuple(trees), ForestParams(n_trees=len(trees)), p, tuple(f"x{j + 1}" for j in range(p)), n_train)


def subtree_nodes(tree, node):
    out = [node]
    if not tree.is_leaf(node):
        out += subtree_nodes(tree, int(tree.left[node])) + subtree_nodes(tree, int(tree.right[node]))
    return out


# -- params ------------------------------------------------------------------


def test_default_params_for_study_size():
    p = ForestParams().resolve(200, 5)
    assert (p.mtry, p.subsample, p.nodesize, p.n_trees) == (1, 127, 5, 100)
    assert p.mtry == math.floor(5 / 3) and p.subsample == math.ceil(0.632 * 200)


@pytest.mark.parametrize(
    "kw", [dict(subsample=300), dict(mtry=6), dict(n_trees=0), dict(nodesize=200), dict(mtry=0)]
)
def test_param_validation(kw):
    with pytest.raises(ValueError):
        ForestParams(**kw).resolve(200, 5)


def test_subsample_above_n_rejected_by_training():
    with pytest.raises(ValueError):
        train_forest(gen_friedman1(10, 1.0, 0), ForestParams(subsample=11))


def test_rejects_unknown_modes():
    with pytest.raises(ValueError):
        ForestParams(search_mode="bogus")


def test_classic_rule_needs_complete_data(corrupted200):
    with pytest.raises(ValueError):
        train_forest(corrupted200, ForestParams(split_rule="CLASSIC", n_trees=1))


def test_empty_dataset_rejected():
    empty = gen_friedman1(3, 1.0, 0).subset(np.array([], dtype=int))
    with pytest.raises(ValueError):
        train_forest(empty, SMALL)


# -- tree growth -------------------------------------------------------------


def test_root_final_when_nodesize_reached():
    d = gen_friedman1(5, 1.0, 0)
    tree = build_tree(d, ForestParams(subsample=5, nodesize=5), 1)
    assert tree.n_nodes == 1
    assert tree.value[0] == pytest.approx(d.response.mean(), rel=1e-12)
    assert isinstance(tree.to_node(), Leaf)


def test_fully_missing_feature_never_cut(friedman200):
    mask = np.zeros((200, 5), dtype=bool)
    mask[:, 2] = True
    d = friedman200.with_mask(mask)
    forest = train_forest(d, ForestParams(n_trees=20, mtry=5, seed=1))
    for t in forest.trees:
        assert 2 not in set(t.feature[t.feature >= 0])


def test_assignation_equals_classic_on_complete_data():
    d = gen_friedman1(50, 1.0, 4)
    for mode in ("EXHAUSTIVE", "DICHOTOMY"):
        a = train_forest(d, ForestParams(n_trees=5, seed=9, split_rule="ASSIGNATION", search_mode=mode))
        b = train_forest(d, ForestParams(n_trees=5, seed=9, split_rule="CLASSIC"))
        assert a.same_structure(b)


def test_bags(friedman200):
    forest = train_forest(friedman200, SMALL)
    for bag in forest.bags:
        assert len(bag) == 127 and len(set(bag.tolist())) == 127
    boot = train_forest(friedman200, ForestParams(n_trees=3, replacement=True, seed=1))
    assert all(len(b) == 200 for b in boot.bags)


def test_trees_differ_and_forest_is_deterministic(friedman200):
    a = train_forest(friedman200, SMALL)
    b = train_forest(friedman200, SMALL)
    assert a.same_structure(b)
    assert not np.array_equal(a.trees[0].bag, a.trees[1].bag)
    c = train_forest(friedman200, ForestParams(n_trees=10, seed=4))
    assert not a.same_structure(c)


def test_thread_count_does_not_change_the_forest(corrupted200):
    a = train_forest(corrupted200, SMALL, n_jobs=1)
    b = train_forest(corrupted200, SMALL, n_jobs=4)
    assert a.same_structure(b)


@given(st.integers(0, 2**32), st.sampled_from(["ASSIGNATION", "MIA"]), st.sampled_from(["EXHAUSTIVE", "DICHOTOMY"]))
def test_partition_and_bookkeeping(seed, rule, mode):
    d = apply_mechanism(gen_friedman1(80, 1.0, seed), MechanismSpec.default("MCAR", {0: 0.3, 3: 0.5}), seed)
    tree = build_tree(d, ForestParams(split_rule=rule, search_mode=mode, nodesize=3), seed)
    # each bag position sits in exactly one leaf
    assert all(tree.is_leaf(int(node)) for node in tree.leaf_of_bag)
    for node in tree.leaves():
        rows = tree.leaf_rows(node)
        assert tree.n_samples[node] == rows.size
        assert tree.value[node] == pytest.approx(d.response[rows].mean(), rel=1e-12, abs=1e-12)
    for node in range(tree.n_nodes):
        if tree.is_leaf(node):
            continue
        l, r = int(tree.left[node]), int(tree.right[node])
        assert tree.n_samples[l] + tree.n_samples[r] == tree.n_samples[node]
        reach = np.isin(tree.leaf_of_bag, subtree_nodes(tree, node))
        in_left = np.isin(tree.leaf_of_bag, subtree_nodes(tree, l))
        miss = d.mask[tree.bag, tree.feature[node]]
        assert tree.miss_left[node] + tree.miss_right[node] == (reach & miss).sum()
        assert tree.miss_left[node] == (in_left & miss).sum()
        # observed rows follow the cut
        x = d.features[tree.bag, tree.feature[node]]
        obs = reach & ~miss
        assert np.array_equal(in_left[obs], x[obs] < tree.position[node])


def test_node_view_round_trip(corrupted200):
    tree = train_forest(corrupted200, ForestParams(n_trees=1, seed=2)).trees[0]
    root = tree.to_node()
    assert isinstance(root, Internal)
    assert root.missing_left_count == tree.miss_left[0]


# -- prediction --------------------------------------------------------------


def test_single_leaf_forest_predicts_mean():
    d = gen_friedman1(5, 1.0, 0)
    forest = train_forest(d, ForestParams(n_trees=3, subsample=5, nodesize=5))
    assert np.allclose(predict_complete(forest, np.random.default_rng(0).random((4, 5))), d.response.mean())


def test_one_tree_forest_equals_tree(friedman200):
    forest = train_forest(friedman200, ForestParams(n_trees=1, seed=5))
    X = np.random.default_rng(1).random((30, 5))
    tree = forest.trees[0]
    assert np.array_equal(predict_complete(forest, X), tree.value[tree.descend(X, np.zeros(X.shape, bool))])


def test_fully_grown_tree_interpolates(friedman200):
    forest = train_forest(friedman200, ForestParams(n_trees=1, mtry=5, subsample=200, nodesize=1, seed=2))
    assert np.allclose(predict_complete(forest, friedman200.features), friedman200.response, rtol=0, atol=1e-12)


def test_forest_averages_trees(friedman200):
    forest = train_forest(friedman200, ForestParams(n_trees=2, seed=8))
    X = np.random.default_rng(3).random((10, 5))
    one = [predict_complete(forest_of(t, p=5, n_train=200), X) for t in forest.trees]
    assert np.allclose(predict_complete(forest, X), (one[0] + one[1]) / 2, atol=1e-14)


@given(st.integers(0, 2**32))
def test_observed_queries_ignore_seed(seed):
    d = apply_mechanism(gen_friedman1(60, 1.0, 1), MechanismSpec.default("MCAR"), 1)
    forest = train_forest(d, ForestParams(n_trees=5, seed=2))
    X = np.random.default_rng(seed).random((20, 5))
    assert np.array_equal(predict_with_missing(forest, X, seed=seed), predict_complete(forest, X))


def test_all_missing_rows_go_left():
    forest = forest_of(stump(3, 0))
    for s in range(50):
        assert predict_with_missing(forest, [np.nan], seed=s) == 0.0


def test_no_training_missing_stops_at_cell_mean():
    forest = forest_of(stump(0, 0))
    assert predict_with_missing(forest, [np.nan], seed=1) == 5.0


def test_balanced_node_monte_carlo():
    forest = forest_of(stump(2, 2))
    draws = np.array([predict_with_missing(forest, [np.nan], seed=s) for s in range(10_000)])
    # Bernoulli(1/2) times 10: sd of the mean is 0.05
    assert abs(draws.mean() - 5.0) < 0.2
    assert set(np.unique(draws)) == {0.0, 10.0}


def test_prediction_rejects_wrong_width(friedman200):
    forest = train_forest(friedman200, SMALL)
    with pytest.raises(ValueError):
        predict_complete(forest, np.zeros(4))


# -- proximity and importance -----------------------------------------------


def test_proximity_single_leaf():
    d = gen_friedman1(5, 1.0, 0)
    forest = train_forest(d, ForestParams(n_trees=2, subsample=5, nodesize=5))
    assert np.array_equal(proximity_matrix(forest, d), np.ones((5, 5)))


def test_proximity_hand_built():
    X = np.array([[0.1], [0.2], [0.8], [0.9]])
    d = Dataset(X, np.zeros_like(X, bool), np.zeros(4))
    # cut at 0.5 pairs rows 0,1 and 2,3; cut at 0.15 splits 0 from 1
    forest = forest_of(stump(0, 0), stump(0, 0, position=0.15))
    K = proximity_matrix(forest, d, in_bag=False)
    assert K[0, 1] == 0.5
    assert K[2, 3] == 1.0
    assert K[0, 2] == 0.0


@given(st.integers(0, 2**32))
def test_proximity_properties(seed):
    d = apply_mechanism(gen_friedman1(40, 1.0, seed), MechanismSpec.default("MCAR"), seed)
    K = proximity_matrix(train_forest(d, ForestParams(n_trees=7, seed=seed)), d)
    assert np.array_equal(K, K.T)
    assert np.all(np.diag(K) == 1.0)
    assert K.min() >= 0.0 and K.max() <= 1.0


def test_in_bag_membership_matches_training_cells(corrupted200):
    forest = train_forest(corrupted200, SMALL)
    ids = leaf_membership(forest, corrupted200)
    for k, t in enumerate(forest.trees):
        assert np.array_equal(ids[k, t.bag], t.leaf_of_bag)


def test_unused_feature_has_zero_purity(friedman200):
    X = np.array(friedman200.features)
    X[:, 4] = 0.3
    d = friedman200.with_features(X)
    imp = variable_importance(train_forest(d, ForestParams(n_trees=20, seed=1)), d)
    assert imp.inc_node_purity[4] == 0.0
    assert imp.inc_node_purity[3] > 0.0


def test_noise_feature_least_important():
    wins = 0
    for r in range(20):
        d = gen_friedman1(200, 1.0, 500 + r)
        noise = np.random.default_rng(r).random((200, 1))
        X = np.hstack([d.features, noise])
        d6 = Dataset(X, np.zeros_like(X, bool), d.response)
        imp = variable_importance(train_forest(d6, ForestParams(n_trees=100, seed=r)), d6)
        wins += int(np.argmin(imp.pct_inc_mse) == 5)
    assert wins >= 18


def test_importance_needs_complete_data(corrupted200):
    with pytest.raises(ValueError):
        variable_importance(train_forest(corrupted200, SMALL), corrupted200)


# -- opacity and persistence -------------------------------------------------


@given(st.integers(0, 2**32), st.sampled_from(["ASSIGNATION", "MIA"]), st.sampled_from(["EXHAUSTIVE", "DICHOTOMY"]))
def test_masked_cells_are_opaque(seed, rule, mode):
    d = apply_mechanism(gen_friedman1(60, 1.0, seed), MechanismSpec.default("MCAR", {0: 0.3, 2: 0.2, 3: 0.4}), seed)
    params = ForestParams(n_trees=4, seed=seed, split_rule=rule, search_mode=mode)
    a = train_forest(d, params)
    b = train_forest(scramble(d, seed), params)
    assert a.same_structure(b)
    q = scramble(d, seed + 1)
    assert np.array_equal(predict_with_missing(a, d.features, d.mask, 3), predict_with_missing(b, q.features, q.mask, 3))
    assert np.array_equal(proximity_matrix(a, d), proximity_matrix(b, q))


def test_forest_file_round_trip(tmp_path, corrupted200):
    forest = train_forest(corrupted200, ForestParams(n_trees=5, split_rule="MIA", seed=1))
    path = tmp_path / "f.json"
    save_forest(forest, path)
    back = load_forest(path)
    assert back.same_structure(forest)
    assert back.params == forest.params
    X, M = corrupted200.features, corrupted200.mask
    assert np.array_equal(predict_with_missing(back, X, M, 1), predict_with_missing(forest, X, M, 1))
    save_forest(back, tmp_path / "g.json")
    assert path.read_bytes() == (tmp_path / "g.json").read_bytes()
