import json

import numpy as np
import pytest

from chunkrl.tree import (ConstantRegressor, LinearRegressor, RegressionTree, TabularRegressor,
                          fit_regression_tree, regressor_from_dict)


def _leaf_sizes(tree, X):
    nodes = {}
    for x in X:
        n = 0
        while tree.feature[n] >= 0:
            n = tree.left[n] if x[tree.feature[n]] <= tree.threshold[n] else tree.right[n]
        nodes[n] = nodes.get(n, 0) + 1
    return nodes


def test_constant_targets_single_leaf():
    X = np.random.default_rng(0).normal(size=(200, 2))
    t = fit_regression_tree(X, np.full(200, 3.5), 5, 10)
    assert t.n_leaves == 1
    np.testing.assert_array_equal(t.predict(X[:5]), 3.5)


def test_depth_one_recovers_step_threshold():
    x = np.linspace(0, 1, 101)
    y = np.where(x > 0.37, 2.0, -1.0)
    t = fit_regression_tree(x, y, 1, 1)
    # exhaustive search over midpoints between grid values
    best = max(((np.sum(y[x <= c]) ** 2 / np.sum(x <= c) + np.sum(y[x > c]) ** 2 / np.sum(x > c)), c)
               for c in (x[:-1] + x[1:]) / 2)[1]
    assert t.threshold[0] == pytest.approx(best)
    assert abs(t.threshold[0] - 0.37) <= 0.01


@pytest.mark.parametrize("depth,leaf", [(1, 1), (3, 5), (5, 20), (6, 50)])
def test_structural_bounds(depth, leaf):
    rng = np.random.default_rng(depth)
    X = rng.normal(size=(400, 3))
    y = np.sin(3 * X[:, 0]) + X[:, 1] ** 2 + 0.1 * rng.normal(size=400)
    t = fit_regression_tree(X, y, depth, leaf)
    assert t.depth <= depth
    assert len(np.unique(t.predict(rng.normal(size=(2000, 3))))) <= 2 ** depth
    assert min(_leaf_sizes(t, X).values()) >= leaf
    leaves = t.feature < 0
    assert t.n_samples[leaves].sum() == 400


def test_leaves_predict_sample_means():
    rng = np.random.default_rng(3)
    X = rng.normal(size=(300, 2))
    y = X[:, 0] + rng.normal(size=300)
    t = fit_regression_tree(X, y, 3, 20)
    pred = t.predict(X)
    for v in np.unique(pred):
        assert v == pytest.approx(y[pred == v].mean())


def test_training_mse_non_increasing_in_depth():
    rng = np.random.default_rng(4)
    X = rng.uniform(-2, 2, size=(500, 2))
    y = np.abs(X[:, 0]) * X[:, 1] + 0.2 * rng.normal(size=500)
    mse = [np.mean((fit_regression_tree(X, y, d, 10).predict(X) - y) ** 2) for d in range(7)]
    assert all(b <= a + 1e-12 for a, b in zip(mse, mse[1:]))


def test_tree_serialization_round_trip():
    rng = np.random.default_rng(5)
    X = rng.normal(size=(200, 2))
    t = fit_regression_tree(X, X[:, 0] * X[:, 1], 4, 5)
    back = regressor_from_dict(json.loads(json.dumps(t.to_dict())))
    assert isinstance(back, RegressionTree)
    Z = rng.normal(size=(100, 2))
    np.testing.assert_array_equal(back.predict(Z), t.predict(Z))


def test_tree_errors():
    with pytest.raises(ValueError):
        fit_regression_tree(np.zeros((0, 1)), np.zeros(0))
    with pytest.raises(ValueError):
        fit_regression_tree(np.zeros((3, 1)), np.zeros(2))
    with pytest.raises(ValueError):
        fit_regression_tree(np.zeros((3, 1)), np.zeros(3), 2, 0)


def test_linear_regressor():
    rng = np.random.default_rng(6)
    X = rng.normal(size=(100, 2))
    y = 1.5 + X @ np.array([2.0, -1.0])
    m = LinearRegressor.fit(X, y, ridge=0.0)
    np.testing.assert_allclose(m.coef, [1.5, 2.0, -1.0], atol=1e-10)
    back = regressor_from_dict(m.to_dict())
    np.testing.assert_allclose(back.predict(X), m.predict(X))


def test_tabular_regressor():
    X = np.array([[0.0], [0.0], [1.0], [1.0], [1.0]])
    y = np.array([1.0, 3.0, 5.0, 6.0, 7.0])
    m = TabularRegressor.fit(X, y)
    np.testing.assert_allclose(m.predict([[0.0], [1.0], [2.0]]), [2.0, 6.0, y.mean()])
    back = regressor_from_dict(json.loads(json.dumps(m.to_dict())))
    np.testing.assert_allclose(back.predict([[1.0]]), [6.0])


def test_constant_regressor():
    c = ConstantRegressor(2.0)
    np.testing.assert_array_equal(c.predict(np.zeros((3, 2))), 2.0)
    assert regressor_from_dict(c.to_dict()).value == 2.0
