"""Regressors used inside fitted-Q iteration: CART tree, ridge-linear, tabular."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


def _as_2d(X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    return X[:, None] if X.ndim == 1 else X


@dataclass
class RegressionTree:
    """Axis-aligned regression tree stored as flat node arrays.

    ``feature[n] == -1`` marks a leaf; internal nodes send ``x[f] <= thr``
    left.
    """

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    n_samples: np.ndarray
    max_depth: int = 0
    min_samples_leaf: int = 1

    kind = "tree"

    @property
    def depth(self) -> int:
        depth = np.zeros(len(self.feature), dtype=int)
        for n in range(len(self.feature)):
            if self.feature[n] >= 0:
                depth[self.left[n]] = depth[self.right[n]] = depth[n] + 1
        return int(depth.max())

    @property
    def n_leaves(self) -> int:
        return int(np.sum(self.feature < 0))

    def predict(self, X) -> np.ndarray:
        X = _as_2d(X)
        node = np.zeros(len(X), dtype=np.int64)
        rows = np.arange(len(X))
        while True:
            f = self.feature[node]
            inner = f >= 0
            if not inner.any():
                return self.value[node]
            idx = rows[inner]
            n = node[inner]
            go_left = X[idx, f[inner]] <= self.threshold[n]
            node[idx] = np.where(go_left, self.left[n], self.right[n])

    def to_dict(self) -> dict:
        def build(n: int) -> dict:
            if self.feature[n] < 0:
                return {"value": float(self.value[n]), "n": int(self.n_samples[n])}
            return {"feature": int(self.feature[n]), "threshold": float(self.threshold[n]),
                    "left": build(int(self.left[n])), "right": build(int(self.right[n]))}
        return {"kind": "tree", "max_depth": self.max_depth, "min_samples_leaf": self.min_samples_leaf,
                "root": build(0)}

    @classmethod
    def from_dict(cls, obj: dict) -> "RegressionTree":
        feat, thr, left, right, val, cnt = [], [], [], [], [], []

        def add(node: dict) -> int:
            i = len(feat)
            feat.append(-1); thr.append(0.0); left.append(-1); right.append(-1)
            val.append(float(node.get("value", 0.0))); cnt.append(int(node.get("n", 0)))
            if "feature" in node:
                feat[i] = int(node["feature"]); thr[i] = float(node["threshold"])
                left[i] = add(node["left"])
                right[i] = add(node["right"])
            return i

        add(obj["root"])
        return cls(np.array(feat), np.array(thr), np.array(left), np.array(right), np.array(val),
                   np.array(cnt), int(obj.get("max_depth", 0)), int(obj.get("min_samples_leaf", 1)))


def _best_split(Xn: np.ndarray, yn: np.ndarray, min_leaf: int):
    """Largest SSE reduction over all features and thresholds, or ``None``."""
    n = len(yn)
    if n < 2 * min_leaf:
        return None
    best = None
    total = yn.sum()
    base = total * total / n
    for f in range(Xn.shape[1]):
        order = np.argsort(Xn[:, f], kind="stable")
        xs = Xn[order, f]
        cs = np.cumsum(yn[order])
        k = np.arange(1, n)                    # left size
        valid = (xs[1:] > xs[:-1]) & (k >= min_leaf) & (n - k >= min_leaf)
        if not valid.any():
            continue
        sl = cs[:-1]
        gain = sl * sl / k + (total - sl) ** 2 / (n - k) - base
        gain = np.where(valid, gain, -np.inf)
        j = int(np.argmax(gain))
        if best is None or gain[j] > best[0]:
            best = (gain[j], f, 0.5 * (xs[j] + xs[j + 1]))
    if best is None or not best[0] > 1e-12 * max(1.0, abs(base)):
        return None
    return best


def fit_regression_tree(X, y, max_depth: int = 5, min_samples_leaf: int = 50) -> RegressionTree:
    """CART with squared-error (variance reduction) splits, grown depth first.

    Leaves predict the mean target and hold at least ``min_samples_leaf``
    samples; a node smaller than ``2 * min_samples_leaf`` stays a leaf.
    """
    X = _as_2d(X)
    y = np.asarray(y, dtype=float)
    if len(y) == 0:
        raise ValueError("cannot fit a tree on empty data")
    if len(X) != len(y):
        raise ValueError("X and y lengths differ")
    if max_depth < 0 or min_samples_leaf < 1:
        raise ValueError("max_depth must be >= 0 and min_samples_leaf >= 1")
    feat, thr, left, right, val, cnt = [], [], [], [], [], []
    stack = [(np.arange(len(y)), 0, -1, False)]
    while stack:
        idx, depth, parent, is_right = stack.pop()
        i = len(feat)
        feat.append(-1); thr.append(0.0); left.append(-1); right.append(-1)
        val.append(float(y[idx].mean())); cnt.append(len(idx))
        if parent >= 0:
            (right if is_right else left)[parent] = i
        if depth >= max_depth:
            continue
        split = _best_split(X[idx], y[idx], min_samples_leaf)
        if split is None:
            continue
        _, f, t = split
        feat[i], thr[i] = f, t
        mask = X[idx, f] <= t
        stack.append((idx[~mask], depth + 1, i, True))
        stack.append((idx[mask], depth + 1, i, False))
    return RegressionTree(np.array(feat), np.array(thr), np.array(left), np.array(right),
                          np.array(val), np.array(cnt), max_depth, min_samples_leaf)


@dataclass
class LinearRegressor:
    """Ridge regression on ``[1, x]``; the intercept is not penalized."""

    coef: np.ndarray
    ridge: float = 1e-6

    kind = "linear"

    @classmethod
    def fit(cls, X, y, ridge: float = 1e-6) -> "LinearRegressor":
        X = _as_2d(X)
        Z = np.hstack([np.ones((len(X), 1)), X])
        pen = ridge * np.eye(Z.shape[1])
        pen[0, 0] = 0.0
        coef = np.linalg.lstsq(Z.T @ Z + pen, Z.T @ np.asarray(y, float), rcond=None)[0]
        return cls(coef, ridge)

    def predict(self, X) -> np.ndarray:
        X = _as_2d(X)
        return self.coef[0] + X @ self.coef[1:]

    def to_dict(self) -> dict:
        return {"kind": "linear", "coef": self.coef.tolist(), "ridge": self.ridge}

    @classmethod
    def from_dict(cls, obj: dict) -> "LinearRegressor":
        return cls(np.asarray(obj["coef"], float), float(obj.get("ridge", 1e-6)))


@dataclass
class TabularRegressor:
    """Mean target per distinct feature row; unseen rows get the overall mean."""

    keys: list = field(default_factory=list)
    values: np.ndarray = field(default_factory=lambda: np.zeros(0))
    default: float = 0.0

    kind = "tabular"

    @classmethod
    def fit(cls, X, y) -> "TabularRegressor":
        X = _as_2d(X)
        y = np.asarray(y, float)
        uniq, inv = np.unique(X, axis=0, return_inverse=True)
        inv = inv.reshape(-1)
        sums = np.bincount(inv, weights=y, minlength=len(uniq))
        counts = np.bincount(inv, minlength=len(uniq))
        return cls([tuple(r) for r in uniq.tolist()], sums / counts, float(y.mean()))

    def predict(self, X) -> np.ndarray:
        X = _as_2d(X)
        lookup = dict(zip(self.keys, self.values.tolist()))
        return np.array([lookup.get(tuple(r), self.default) for r in X.tolist()])

    def to_dict(self) -> dict:
        return {"kind": "tabular", "keys": [list(k) for k in self.keys],
                "values": self.values.tolist(), "default": self.default}

    @classmethod
    def from_dict(cls, obj: dict) -> "TabularRegressor":
        return cls([tuple(k) for k in obj["keys"]], np.asarray(obj["values"], float),
                   float(obj.get("default", 0.0)))


@dataclass
class ConstantRegressor:
    value: float = 0.0

    kind = "constant"

    def predict(self, X) -> np.ndarray:
        return np.full(len(_as_2d(X)), self.value)

    def to_dict(self) -> dict:
        return {"kind": "constant", "value": self.value}

    @classmethod
    def from_dict(cls, obj: dict) -> "ConstantRegressor":
        return cls(float(obj["value"]))


def regressor_from_dict(obj: dict):
    kinds = {"tree": RegressionTree, "linear": LinearRegressor, "tabular": TabularRegressor,
             "constant": ConstantRegressor}
    return kinds[obj["kind"]].from_dict(obj)
