"""Linear-Gaussian transition model ``S' ~ N(W phi(S, A), diag(sigma^2))``."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .panel import EmptySelectionError, Panel, Window, transitions

SIGMA_FLOOR = 1e-6
RIDGE_SCALE = 1e-8
LOG_2PI = float(np.log(2.0 * np.pi))

_TERMS = ("intercept", "state", "action", "interaction")


@dataclass(frozen=True)
class FeatureMap:
    """Expands ``(s, a)`` into ``[1, s, a, a*s]`` (or any ordered subset)."""

    terms: tuple[str, ...] = _TERMS

    def __post_init__(self):
        terms = tuple(self.terms)
        unknown = set(terms) - set(_TERMS)
        if unknown:
            raise ValueError(f"unknown feature terms {sorted(unknown)}")
        if not terms or len(set(terms)) != len(terms):
            raise ValueError("feature terms must be non-empty and unique")
        # canonical order keeps the intercept first
        object.__setattr__(self, "terms", tuple(t for t in _TERMS if t in terms))

    def output_dim(self, state_dim: int) -> int:
        widths = {"intercept": 1, "state": state_dim, "action": 1, "interaction": state_dim}
        return sum(widths[t] for t in self.terms)

    def __call__(self, states: np.ndarray, actions: np.ndarray) -> np.ndarray:
        s = np.asarray(states, dtype=float)
        if s.ndim == 1:
            s = s[:, None]
        a = np.asarray(actions, dtype=float).reshape(-1, 1)
        cols = []
        for t in self.terms:
            if t == "intercept":
                cols.append(np.ones_like(a))
            elif t == "state":
                cols.append(s)
            elif t == "action":
                cols.append(a)
            else:
                cols.append(a * s)
        return np.hstack(cols)

    def to_dict(self) -> dict:
        return {"terms": list(self.terms)}


INTERCEPT_ONLY = FeatureMap(("intercept",))


@dataclass(frozen=True, eq=False)
class TransitionModel:
    coef: np.ndarray          # (d, q)
    noise_scale: np.ndarray   # (d,)
    feature_map: FeatureMap = field(default_factory=FeatureMap)
    low_rank: bool = False

    def __post_init__(self):
        coef = np.atleast_2d(np.asarray(self.coef, dtype=float))
        sigma = np.atleast_1d(np.asarray(self.noise_scale, dtype=float))
        if sigma.shape != (coef.shape[0],):
            raise ValueError("noise_scale must have one entry per state dimension")
        if not (np.all(np.isfinite(coef)) and np.all(np.isfinite(sigma))):
            raise ValueError("model parameters must be finite")
        if np.any(sigma < SIGMA_FLOOR):
            raise ValueError(f"noise scale below floor {SIGMA_FLOOR}")
        object.__setattr__(self, "coef", coef)
        object.__setattr__(self, "noise_scale", sigma)

    @property
    def state_dim(self) -> int:
        return self.coef.shape[0]

    def mean(self, states, actions) -> np.ndarray:
        return self.feature_map(states, actions) @ self.coef.T

    def logpdf(self, states, actions, next_states) -> np.ndarray:
        """Per-transition Gaussian log density, shape ``(n,)``."""
        y = np.asarray(next_states, dtype=float).reshape(-1, self.state_dim)
        resid = y - self.mean(states, actions)
        return gaussian_logpdf(resid, self.noise_scale)

    def to_dict(self) -> dict:
        return {
            "coef": self.coef.tolist(),
            "noise_scale": self.noise_scale.tolist(),
            "feature_map": self.feature_map.to_dict(),
            "low_rank": self.low_rank,
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "TransitionModel":
        return cls(
            np.asarray(obj["coef"], dtype=float),
            np.asarray(obj["noise_scale"], dtype=float),
            FeatureMap(tuple(obj["feature_map"]["terms"])),
            bool(obj.get("low_rank", False)),
        )


def gaussian_logpdf(resid: np.ndarray, sigma: np.ndarray) -> np.ndarray:
    sigma = np.asarray(sigma, dtype=float)
    z = resid / sigma
    return -0.5 * np.sum(z * z, axis=-1) - np.sum(np.log(sigma)) - 0.5 * resid.shape[-1] * LOG_2PI


def ridge_solve(gram: np.ndarray, cross: np.ndarray) -> np.ndarray:
    """Solve ``(G + lam I) W = B`` with ``lam = 1e-8 tr(G) / q``; batched over leading axes."""
    q = gram.shape[-1]
    tr = np.trace(gram, axis1=-2, axis2=-1)
    lam = RIDGE_SCALE * np.maximum(tr, 1e-300) / q
    reg = gram + lam[..., None, None] * np.eye(q)
    return np.linalg.solve(reg, cross)


def fit_arrays(X: np.ndarray, Y: np.ndarray, weights: np.ndarray | None = None,
               feature_map: FeatureMap | None = None) -> TransitionModel:
    """Weighted Gaussian MLE from a design matrix ``X`` (n, q) and targets ``Y`` (n, d)."""
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    if Y.ndim == 1:
        Y = Y[:, None]
    n, q = X.shape
    if n == 0:
        raise EmptySelectionError("no transitions to fit")
    w = np.ones(n) if weights is None else np.asarray(weights, dtype=float)
    Xw = X * w[:, None]
    gram = Xw.T @ X
    cross = Xw.T @ Y
    coef = ridge_solve(gram, cross).T
    resid = Y - X @ coef.T
    var = (w @ (resid * resid)) / w.sum()
    sigma = np.maximum(SIGMA_FLOOR, np.sqrt(var))
    low_rank = n < q or np.linalg.matrix_rank(gram) < q
    return TransitionModel(coef, sigma, feature_map or FeatureMap(), bool(low_rank))


def fit_mle(panel: Panel, subjects: Iterable[int] | None = None,
            window: Window | tuple[int, int] | None = None,
            feature_map: FeatureMap | None = None) -> TransitionModel:
    """Maximum likelihood fit on the rectangle ``subjects x window``.

    Coefficients solve the (ridge-stabilised) normal equations per output
    dimension; ``sigma_j = max(1e-6, RMS residual_j)``.  Fewer transitions
    than features still return the ridge solution, with ``low_rank=True``.
    """
    fm = feature_map or FeatureMap()
    tr = transitions(panel, subjects, window)
    if len(tr) == 0:
        raise EmptySelectionError("no transitions in selection")
    return fit_arrays(fm(tr.states, tr.actions), tr.next_states, feature_map=fm)


def log_likelihood(model: TransitionModel, panel: Panel, subjects: Iterable[int] | None = None,
                   window: Window | tuple[int, int] | None = None, normalized: bool = False) -> float:
    tr = transitions(panel, subjects, window)
    if len(tr) == 0:
        raise EmptySelectionError("no transitions in selection")
    if model.state_dim != panel.state_dim:
        raise ValueError("model and panel state dimensions differ")
    ll = model.logpdf(tr.states, tr.actions, tr.next_states)
    return float(ll.mean() if normalized else ll.sum())


def design(panel: Panel, feature_map: FeatureMap) -> tuple[np.ndarray, np.ndarray]:
    """Features ``(N, T, q)`` and next states ``(N, T, d)`` for every transition."""
    n, tp1, d = panel.states.shape
    X = feature_map(panel.states[:, :-1].reshape(-1, d), panel.actions[:, :-1].reshape(-1))
    return X.reshape(n, tp1 - 1, -1), panel.states[:, 1:]


def n_free_params(feature_map: FeatureMap, state_dim: int) -> int:
    """Number of free mean parameters ``q * d``."""
    return feature_map.output_dim(state_dim) * state_dim


def perturbed(model: TransitionModel, delta: np.ndarray | Sequence) -> TransitionModel:
    return TransitionModel(model.coef + np.asarray(delta, dtype=float).reshape(model.coef.shape),
                           model.noise_scale, model.feature_map)
