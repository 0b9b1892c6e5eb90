import numpy as np
import pytest

from riskpipe.errors import ConfigError, DataError
from riskpipe.evaluate import auc_score
from riskpipe.forest import (
    ForestModel,
    ForestParams,
    Tree,
    cross_validate,
    expand_grid,
    fit_forest,
    predict_proba,
    search_grid,
    tune_forest,
)


def leaf(value):
    i = np.array([-1], dtype=np.int64)
    return Tree(i, np.zeros(1), i.copy(), i.copy(), np.array([value], dtype=np.float64))


def separable(rng, n=200, d=5):
    X = rng.normal(size=(n, d))
    y = (X[:, 2] > 0).astype(int)
    return X, y


def test_separable_data_fits_perfectly(rng):
    X, y = separable(rng)
    m = fit_forest(X, y, ForestParams(n_trees=20), seed=0)
    assert auc_score(predict_proba(m, X), y) == 1.0
    assert int(np.argmax(m.split_counts())) == 2


def test_stump_threshold_between_classes():
    X = np.array([[1.0], [1.0], [2.0], [2.0]])
    y = np.array([0, 0, 1, 1])
    m = fit_forest(X, y, ForestParams(n_trees=1, max_depth=1, bootstrap=False, max_features=1), seed=0)
    (t,) = m.trees
    assert t.depth() == 1
    assert 1.0 < t.threshold[0] < 2.0
    assert predict_proba(m, np.array([[0.0], [3.0]])).tolist() == [0.0, 1.0]


def test_unanimous_leaves_without_depth_limit(rng):
    X, y = separable(rng, n=60)
    m = fit_forest(X, y, ForestParams(n_trees=3, bootstrap=False, max_features=5), seed=1)
    for t in m.trees:
        leaves = t.value[t.left < 0]
        assert np.all((leaves == 0.0) | (leaves == 1.0))


def test_two_leaf_trees_average():
    m = ForestModel([leaf(1.0), leaf(0.0)], n_features=3, params=ForestParams(n_trees=2), seed=0)
    assert predict_proba(m, np.zeros((4, 3))).tolist() == [0.5] * 4


def test_tree_order_does_not_matter(rng):
    X, y = separable(rng)
    m = fit_forest(X, y, ForestParams(n_trees=7, max_depth=3), seed=2)
    rev = ForestModel(m.trees[::-1], m.n_features, m.params, m.seed)
    np.testing.assert_allclose(predict_proba(m, X), predict_proba(rev, X), rtol=0, atol=1e-12)


def test_shuffled_labels_give_chance_oof_auc(rng):
    X = rng.normal(size=(300, 8))
    y = rng.permutation(np.r_[np.ones(100), np.zeros(200)]).astype(int)
    folds = [np.arange(300) % 3 == i for i in range(3)]
    aucs, _, scores = cross_validate(X, y, folds, ForestParams(n_trees=50, min_samples_leaf=5), seed=0)
    oof = np.empty(300)
    for f, s in zip(folds, scores):
        oof[f] = s
    assert 0.4 <= auc_score(oof, y) <= 0.6


def test_deterministic_and_thread_independent(rng):
    X, y = separable(rng)
    p = ForestParams(n_trees=6, max_depth=4)
    a = fit_forest(X, y, p, seed=3, n_jobs=1)
    b = fit_forest(X, y, p, seed=3, n_jobs=3)
    assert [t.structure() for t in a.trees] == [t.structure() for t in b.trees]
    assert np.array_equal(predict_proba(a, X), predict_proba(b, X, n_jobs=2))


def test_save_load_roundtrip(tmp_path, rng):
    X, y = separable(rng)
    m = fit_forest(X, y, ForestParams(n_trees=4), seed=0, feature_names=[f"f{i}" for i in range(5)])
    m.save(tmp_path / "model.bin")
    back = ForestModel.load(tmp_path / "model.bin")
    assert back.params == m.params and back.feature_names == m.feature_names
    assert np.array_equal(predict_proba(back, X), predict_proba(m, X))


def test_singleton_grid_returns_it(rng):
    X, y = separable(rng, n=90)
    g = np.repeat([f"d{i}" for i in range(15)], 6)
    best = tune_forest(X, y, g, grid={"n_trees": [5], "min_samples_leaf": [2]}, k=3, seed=0)
    assert best == ForestParams(n_trees=5, min_samples_leaf=2)


def test_grid_ties_go_to_smaller_model(rng):
    X, y = separable(rng)
    folds = [np.arange(len(y)) % 2 == i for i in range(2)]
    best, *_ = search_grid(X, y, folds, expand_grid({"n_trees": [10, 5], "max_depth": [None]}), seed=0)
    assert best.n_trees == 5


def test_errors(rng):
    with pytest.raises(ConfigError):
        ForestParams(n_trees=0)
    with pytest.raises(ConfigError):
        expand_grid({"n_trees": [5], "bogus": [1]})
    with pytest.raises(DataError):
        fit_forest(np.zeros((4, 2)), np.zeros(4))
    with pytest.raises(DataError):
        fit_forest(np.full((2, 1), np.nan), np.array([0, 1]))
    m = fit_forest(*separable(rng), ForestParams(n_trees=1))
    with pytest.raises(DataError):
        predict_proba(m, np.zeros((2, 3)))
