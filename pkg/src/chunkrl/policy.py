"""Fitted-Q iteration with per-action regressors and epsilon-greedy execution."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from itertools import product
from typing import Sequence

import numpy as np

from .tree import (ConstantRegressor, LinearRegressor, TabularRegressor, fit_regression_tree,
                   regressor_from_dict)

DEPTH_GRID = (3, 5, 6)
LEAF_GRID = (50, 60, 80)


@dataclass(frozen=True)
class RegressorSpec:
    kind: str = "tree"
    max_depth: int = 5
    min_samples_leaf: int = 50
    ridge: float = 1e-6
    cv: bool = False
    cv_folds: int = 5
    depth_grid: tuple[int, ...] = DEPTH_GRID
    leaf_grid: tuple[int, ...] = LEAF_GRID

    def __post_init__(self):
        if self.kind not in ("tree", "linear", "tabular"):
            raise ValueError(f"unknown regressor kind {self.kind!r}")

    def fit(self, X, y):
        if len(y) == 0:
            return ConstantRegressor(0.0)
        if self.kind == "tree":
            return fit_regression_tree(X, y, self.max_depth, self.min_samples_leaf)
        if self.kind == "linear":
            return LinearRegressor.fit(X, y, self.ridge)
        return TabularRegressor.fit(X, y)

    def with_tree(self, depth: int, leaf: int) -> "RegressorSpec":
        return RegressorSpec("tree", depth, leaf, self.ridge, False, self.cv_folds,
                             self.depth_grid, self.leaf_grid)


@dataclass
class PolicyModel:
    regressors: dict
    action_codes: tuple[int, ...] = (-1, 1)
    gamma: float = 0.9
    epsilon: float = 0.05
    iterations: int = 0
    spec: RegressorSpec = field(default_factory=RegressorSpec)

    def q_values(self, states) -> np.ndarray:
        """``(n, n_actions)`` Q estimates, columns in ascending action-code order."""
        s = _states(states)
        return np.stack([self.regressors[a].predict(s) for a in self.action_codes], axis=1)

    def greedy(self, states) -> np.ndarray:
        q = self.q_values(states)
        return np.asarray(self.action_codes)[np.argmax(q, axis=1)]

    def act_batch(self, states, rng: np.random.Generator, epsilon: float | None = None) -> np.ndarray:
        eps = self.epsilon if epsilon is None else epsilon
        s = _states(states)
        u = rng.random(len(s))
        pick = rng.integers(0, len(self.action_codes), size=len(s))
        explore = np.asarray(self.action_codes)[pick]
        return np.where(u < eps, explore, self.greedy(s))

    def to_dict(self) -> dict:
        return {
            "action_codes": list(self.action_codes),
            "gamma": self.gamma,
            "epsilon": self.epsilon,
            "iterations": self.iterations,
            "regressors": {str(a): self.regressors[a].to_dict() for a in self.action_codes},
        }

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, obj: dict) -> "PolicyModel":
        codes = tuple(int(a) for a in obj["action_codes"])
        regs = {a: regressor_from_dict(obj["regressors"][str(a)]) for a in codes}
        return cls(regs, codes, float(obj["gamma"]), float(obj["epsilon"]), int(obj.get("iterations", 0)))


def _states(states) -> np.ndarray:
    s = np.asarray(states, dtype=float)
    if s.ndim == 0:
        s = s.reshape(1, 1)
    elif s.ndim == 1:
        s = s[:, None]
    return s


def act(policy: PolicyModel, state, rng: np.random.Generator) -> int:
    """Greedy action with probability ``1 - epsilon``, otherwise a uniform action."""
    s = np.asarray(state, dtype=float).reshape(1, -1)
    return int(policy.act_batch(s, rng)[0])


@dataclass
class FqiResult:
    policy: PolicyModel
    targets: np.ndarray
    history: list[float]


def _fqi(S, A, R, S2, spec: RegressorSpec, codes, gamma, n_iters, tol) -> FqiResult:
    groups = {a: np.flatnonzero(A == a) for a in codes}
    regs = {a: ConstantRegressor(0.0) for a in codes}
    q_sa = np.zeros(len(R))
    targets = R.copy()
    history = []
    it = 0
    for it in range(1, n_iters + 1):
        q_next = np.stack([regs[a].predict(S2) for a in codes], axis=1).max(axis=1)
        targets = R + gamma * q_next
        try:
            regs = {a: spec.fit(S[g], targets[g]) for a, g in groups.items()}
        except Exception as exc:
            raise RuntimeError(f"regressor fit failed at iteration {it}: {exc}") from exc
        new = np.empty(len(R))
        for a, g in groups.items():
            new[g] = regs[a].predict(S[g])
        delta = float(np.max(np.abs(new - q_sa))) if len(R) else 0.0
        history.append(delta)
        q_sa = new
        if delta < tol:
            break
    return FqiResult(PolicyModel(regs, tuple(codes), gamma, 0.05, it, spec), targets, history)


def cv_tree_params(S, A, targets, spec: RegressorSpec, codes, seed: int = 0) -> tuple[int, int]:
    """Pick ``(max_depth, min_samples_leaf)`` minimizing k-fold MSE of the targets."""
    rng = np.random.default_rng(seed)
    folds = {}
    for a in codes:
        g = np.flatnonzero(A == a)
        folds[a] = (g, rng.permutation(len(g)) % spec.cv_folds)
    best, best_err = None, np.inf
    for depth, leaf in product(spec.depth_grid, spec.leaf_grid):
        err = 0.0
        for a, (g, fold) in folds.items():
            for f in range(spec.cv_folds):
                tr, te = g[fold != f], g[fold == f]
                if len(te) == 0 or len(tr) == 0:
                    continue
                tree = fit_regression_tree(S[tr], targets[tr], depth, leaf)
                err += float(np.sum((tree.predict(S[te]) - targets[te]) ** 2))
        if err < best_err:
            best, best_err = (depth, leaf), err
    return best


def fitted_q_iteration(states, actions, rewards, next_states, spec: RegressorSpec | None = None,
                       gamma: float = 0.9, n_iters: int = 50, tol: float = 1e-4,
                       action_codes: Sequence[int] = (-1, 1), epsilon: float = 0.05,
                       seed: int = 0) -> PolicyModel:
    """Iterate ``Q <- fit(r + gamma max_a' Q(s', a'))`` from ``Q = 0``.

    One regressor per action.  Stops early once the fitted values on the
    training pairs move by less than ``tol``.  With ``spec.cv`` the tree
    size is chosen by cross-validating the final Bellman targets of a
    provisional run, then the iteration is rerun with the chosen size.
    """
    spec = spec or RegressorSpec()
    if not 0.0 <= gamma < 1.0:
        raise ValueError("gamma must lie in [0, 1)")
    S = _states(states)
    S2 = _states(next_states)
    A = np.asarray(actions).reshape(-1)
    R = np.asarray(rewards, dtype=float).reshape(-1)
    if len(R) == 0:
        raise ValueError("no transitions")
    if not (len(S) == len(S2) == len(A) == len(R)):
        raise ValueError("transition arrays have different lengths")
    codes = tuple(sorted(int(a) for a in action_codes))
    if not set(np.unique(A).tolist()) <= set(codes):
        raise ValueError("actions outside the action space")
    res = _fqi(S, A, R, S2, spec, codes, gamma, n_iters, tol)
    if spec.cv and spec.kind == "tree":
        depth, leaf = cv_tree_params(S, A, res.targets, spec, codes, seed)
        res = _fqi(S, A, R, S2, spec.with_tree(depth, leaf), codes, gamma, n_iters, tol)
    pol = res.policy
    pol.epsilon = epsilon
    return pol


def value_iteration(P: np.ndarray, Rsa: np.ndarray, gamma: float, n_iters: int = 10_000,
                    tol: float = 1e-13) -> np.ndarray:
    """Exact ``Q`` for a finite MDP with ``P[s, a, s']`` and ``Rsa[s, a]``."""
    Q = np.zeros_like(Rsa, dtype=float)
    for _ in range(n_iters):
        new = Rsa + gamma * P @ Q.max(axis=1)
        if np.max(np.abs(new - Q)) < tol:
            return new
        Q = new
    return Q
