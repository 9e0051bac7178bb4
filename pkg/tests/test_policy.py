import json

import numpy as np
import pytest

from chunkrl.policy import (PolicyModel, RegressorSpec, act, cv_tree_params, fitted_q_iteration,
                            value_iteration)
from chunkrl.tree import ConstantRegressor, LinearRegressor, fit_regression_tree

# two-state, two-action deterministic chain: action +1 moves to state 1,
# action -1 moves to state 0; reward 1 for taking +1 in state 1
P = np.zeros((2, 2, 2))
P[:, 0, 0] = 1.0      # column 0 is action -1
P[:, 1, 1] = 1.0      # column 1 is action +1
R = np.array([[0.0, 0.2], [0.5, 1.0]])


def _chain_transitions():
    s, a = np.meshgrid([0.0, 1.0], [-1, 1], indexing="ij")
    s, a = s.ravel(), a.ravel()
    s2 = (a > 0).astype(float)
    r = R[s.astype(int), (a > 0).astype(int)]
    return s, a, r, s2


def test_tabular_fqi_matches_value_iteration():
    s, a, r, s2 = _chain_transitions()
    pol = fitted_q_iteration(s, a, r, s2, RegressorSpec("tabular"), gamma=0.9, n_iters=200, tol=0.0)
    Q = value_iteration(P, R, 0.9)
    np.testing.assert_allclose(pol.q_values([0.0, 1.0]), Q, atol=1e-6)
    assert pol.greedy([0.0, 1.0]).tolist() == [1, 1]


def test_value_iteration_closed_form():
    Q = value_iteration(P, R, 0.9)
    # always +1: V(1) = 1 / (1 - 0.9) = 10
    assert Q[1, 1] == pytest.approx(10.0, abs=1e-9)
    assert Q[0, 1] == pytest.approx(0.2 + 0.9 * 10.0, abs=1e-9)


def test_zero_rewards_give_zero_q():
    rng = np.random.default_rng(0)
    s = rng.normal(size=300)
    a = rng.choice([-1, 1], size=300)
    pol = fitted_q_iteration(s, a, np.zeros(300), rng.normal(size=300), RegressorSpec("tree", 3, 10))
    np.testing.assert_array_equal(pol.q_values(s), 0.0)
    assert np.all(pol.greedy(s) == -1)


def test_gamma_zero_is_reward_regression():
    rng = np.random.default_rng(1)
    s = rng.normal(size=(400, 1))
    a = rng.choice([-1, 1], size=400)
    r = 4 * s[:, 0] + 0.25 * s[:, 0] ** 2 * a + 0.1 * rng.normal(size=400)
    spec = RegressorSpec("tree", 4, 20)
    pol = fitted_q_iteration(s, a, r, rng.normal(size=(400, 1)), spec, gamma=0.0)
    z = rng.normal(size=(50, 1))
    for j, code in enumerate((-1, 1)):
        direct = fit_regression_tree(s[a == code], r[a == code], 4, 20)
        np.testing.assert_array_equal(pol.q_values(z)[:, j], direct.predict(z))


def test_linear_fqi_on_known_problem():
    # Q(s, a) = r(s, a) when next states carry no value: s' is constant and Q(s') = Q(0)
    rng = np.random.default_rng(2)
    s = rng.normal(size=500)
    a = rng.choice([-1, 1], size=500)
    r = s * a
    pol = fitted_q_iteration(s, a, r, np.zeros(500), RegressorSpec("linear"), gamma=0.5)
    assert pol.greedy([2.0, -2.0]).tolist() == [1, -1]


def test_cv_selects_from_grid():
    rng = np.random.default_rng(3)
    s = rng.uniform(-1, 1, size=(600, 1))
    a = rng.choice([-1, 1], size=600)
    y = np.where(s[:, 0] > 0, 1.0, -1.0) * a + 0.3 * rng.normal(size=600)
    spec = RegressorSpec("tree", cv=True)
    depth, leaf = cv_tree_params(s, a, y, spec, (-1, 1), seed=0)
    assert depth in (3, 5, 6) and leaf in (50, 60, 80)
    pol = fitted_q_iteration(s, a, y, s, spec, gamma=0.0)
    assert pol.spec.max_depth in (3, 5, 6) and pol.spec.min_samples_leaf in (50, 60, 80)
    assert not pol.spec.cv


def test_cv_matches_manual_fold_search():
    rng = np.random.default_rng(4)
    s = rng.normal(size=(300, 1))
    a = rng.choice([-1, 1], size=300)
    y = s[:, 0] ** 2 * a + rng.normal(size=300)
    spec = RegressorSpec("tree", cv=True, depth_grid=(1, 4), leaf_grid=(10, 60))
    got = cv_tree_params(s, a, y, spec, (-1, 1), seed=7)
    fold_rng = np.random.default_rng(7)
    folds = {c: (np.flatnonzero(a == c), None) for c in (-1, 1)}
    folds = {c: (g, fold_rng.permutation(len(g)) % 5) for c, (g, _) in folds.items()}
    errs = {}
    for d in (1, 4):
        for leaf in (10, 60):
            e = 0.0
            for g, fold in folds.values():
                for f in range(5):
                    tr, te = g[fold != f], g[fold == f]
                    e += np.sum((fit_regression_tree(s[tr], y[tr], d, leaf).predict(s[te]) - y[te]) ** 2)
            errs[(d, leaf)] = e
    assert got == min(errs, key=errs.get)


def test_greedy_ties_to_lowest_code():
    pol = PolicyModel({-1: ConstantRegressor(1.0), 1: ConstantRegressor(1.0)})
    assert pol.greedy(np.zeros(4)).tolist() == [-1] * 4


def test_epsilon_zero_always_greedy():
    pol = PolicyModel({-1: LinearRegressor(np.array([0.0, -1.0])), 1: LinearRegressor(np.array([0.0, 1.0]))},
                      epsilon=0.0)
    rng = np.random.default_rng(0)
    s = rng.normal(size=1000)
    np.testing.assert_array_equal(pol.act_batch(s, rng), np.where(s > 0, 1, -1))
    assert act(pol, [0.5], rng) == 1


def test_epsilon_one_uniform():
    pol = PolicyModel({-1: ConstantRegressor(0.0), 1: ConstantRegressor(5.0)}, epsilon=1.0)
    rng = np.random.default_rng(1)
    share = np.mean(pol.act_batch(np.zeros(10_000), rng) == 1)
    assert abs(share - 0.5) <= 3 * np.sqrt(0.25 / 10_000)


def test_default_epsilon():
    s, a, r, s2 = _chain_transitions()
    assert fitted_q_iteration(s, a, r, s2, RegressorSpec("tabular")).epsilon == 0.05


def test_act_deterministic_given_rng():
    pol = PolicyModel({-1: ConstantRegressor(0.0), 1: ConstantRegressor(1.0)}, epsilon=0.3)
    x = [pol.act_batch(np.zeros(50), np.random.default_rng(9)) for _ in range(2)]
    np.testing.assert_array_equal(*x)


def test_policy_serialization():
    rng = np.random.default_rng(5)
    s = rng.normal(size=(300, 1))
    a = rng.choice([-1, 1], size=300)
    pol = fitted_q_iteration(s, a, s[:, 0] * a, s, RegressorSpec("tree", 3, 20), gamma=0.5)
    back = PolicyModel.from_dict(json.loads(pol.dumps()))
    z = rng.normal(size=(40, 1))
    np.testing.assert_array_equal(back.q_values(z), pol.q_values(z))
    assert back.epsilon == pol.epsilon and back.gamma == 0.5


def test_fqi_errors():
    s, a, r, s2 = _chain_transitions()
    with pytest.raises(ValueError):
        fitted_q_iteration(s, a, r, s2, gamma=1.0)
    with pytest.raises(ValueError):
        fitted_q_iteration(s[:0], a[:0], r[:0], s2[:0])
    with pytest.raises(ValueError):
        fitted_q_iteration(s, a[:-1], r, s2)
    with pytest.raises(ValueError):
        fitted_q_iteration(s, a * 2, r, s2)
    with pytest.raises(ValueError):
        RegressorSpec("forest")


def test_regressor_failure_reports_iteration():
    class Broken(RegressorSpec):
        def fit(self, X, y):
            raise FloatingPointError("boom")
    s, a, r, s2 = _chain_transitions()
    with pytest.raises(RuntimeError, match="iteration 1"):
        fitted_q_iteration(s, a, r, s2, Broken("tabular"))
