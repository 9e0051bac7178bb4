"""Weighted-likelihood Lloyd clustering of subjects on their recent windows.

Subject ``i`` contributes the transitions of ``[T - tau_i, T]`` with weight
``1 / tau_i``, so every subject enters the objective as an average
log-likelihood regardless of how long its stationary window is.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .model import LOG_2PI, SIGMA_FLOOR, FeatureMap, TransitionModel, design, log_likelihood, ridge_solve
from .panel import Panel


@dataclass
class Clustering:
    k: int
    assignment: np.ndarray
    models: list[TransitionModel]
    objective: float
    restarts_used: int = 1
    converged: bool = True
    history: list[float] = field(default_factory=list)
    repaired: list[bool] = field(default_factory=list)

    def members(self, j: int) -> np.ndarray:
        return np.flatnonzero(self.assignment == j)

    def to_dict(self) -> dict:
        return {
            "k": self.k,
            "assignment": self.assignment.tolist(),
            "models": [m.to_dict() for m in self.models],
            "objective": self.objective,
            "restarts_used": self.restarts_used,
            "converged": self.converged,
        }


def check_taus(panel: Panel, tau_hats) -> np.ndarray:
    tau = np.broadcast_to(np.asarray(tau_hats, dtype=np.int64), (panel.n_subjects,)).copy()
    if np.any(tau < 1) or np.any(tau > panel.horizon):
        raise ValueError("every tau must lie in [1, T]")
    return tau


def cluster_objective(panel: Panel, assignment, models: Sequence[TransitionModel], tau_hats) -> float:
    """``sum_i (1/tau_i) * log-likelihood of subject i's window under its cluster model``."""
    tau = check_taus(panel, tau_hats)
    assignment = np.asarray(assignment, dtype=np.int64)
    if assignment.shape != (panel.n_subjects,):
        raise ValueError("assignment must have one entry per subject")
    if np.any(assignment < 0) or np.any(assignment >= len(models)):
        raise IndexError("assignment refers to a missing cluster model")
    T = panel.horizon
    total = 0.0
    for i in range(panel.n_subjects):
        total += log_likelihood(models[assignment[i]], panel, [i], (T - tau[i], T)) / tau[i]
    return total


class WindowData:
    """Masked design arrays for the per-subject windows ``[T - tau_i, T]``."""

    def __init__(self, panel: Panel, tau_hats, feature_map: FeatureMap):
        self.tau = check_taus(panel, tau_hats)
        self.feature_map = feature_map
        X, Y = design(panel, feature_map)
        T = panel.horizon
        self.mask = (np.arange(T)[None, :] >= (T - self.tau)[:, None]).astype(float)
        self.X, self.Y = X, Y
        Xm = X * self.mask[..., None]
        self.gram = np.einsum("itq,itr->iqr", Xm, X)
        self.cross = np.einsum("itq,itd->iqd", Xm, Y)
        self.weights = 1.0 / self.tau
        self.n, self.d = Y.shape[0], Y.shape[-1]

    def fit(self, members: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Weighted MLE ``(W (q, d), sigma (d,))`` for a set of subjects."""
        w = self.weights[members]
        G = np.einsum("i,iqr->qr", w, self.gram[members])
        B = np.einsum("i,iqd->qd", w, self.cross[members])
        W = ridge_solve(G, B)
        rss = self.rss(W)[members]
        var = np.sum(rss * w[:, None], axis=0) / len(members)
        return W, np.maximum(SIGMA_FLOOR, np.sqrt(var))

    def rss(self, W: np.ndarray) -> np.ndarray:
        r = self.Y - self.X @ W
        return np.einsum("it,itd->id", self.mask, r * r)

    def scores(self, W: np.ndarray, sigma: np.ndarray) -> np.ndarray:
        """Average window log-likelihood of every subject under ``(W, sigma)``."""
        rss = self.rss(W)
        ll = -0.5 * np.sum(rss / sigma**2, axis=1) - self.tau * (np.sum(np.log(sigma)) + 0.5 * self.d * LOG_2PI)
        return ll * self.weights

    def model(self, W, sigma) -> TransitionModel:
        return TransitionModel(W.T, sigma, self.feature_map)


def _repair(assignment: np.ndarray, score_own: np.ndarray, k: int) -> bool:
    repaired = False
    while True:
        counts = np.bincount(assignment, minlength=k)
        empty = np.flatnonzero(counts == 0)
        if len(empty) == 0:
            return repaired
        big = int(np.argmax(counts))
        cand = np.flatnonzero(assignment == big)
        worst = cand[int(np.argmin(score_own[cand]))]
        assignment[worst] = empty[0]
        score_own[worst] = np.inf
        repaired = True


def _lloyd(data: WindowData, init: np.ndarray, k: int, max_iter: int):
    assignment = init.copy()
    history, repaired = [], []
    converged = False
    params = []
    for _ in range(max_iter):
        params = [data.fit(np.flatnonzero(assignment == j)) for j in range(k)]
        S = np.stack([data.scores(W, s) for W, s in params], axis=1)
        history.append(float(S[np.arange(data.n), assignment].sum()))
        new = np.argmax(S, axis=1)  # first maximum: lowest cluster index
        rep = _repair(new, S[np.arange(data.n), new].copy(), k)
        repaired.append(rep)
        if np.array_equal(new, assignment):
            converged = True
            break
        assignment = new
    else:
        params = [data.fit(np.flatnonzero(assignment == j)) for j in range(k)]
        S = np.stack([data.scores(W, s) for W, s in params], axis=1)
        history.append(float(S[np.arange(data.n), assignment].sum()))
    return assignment, params, history[-1], converged, history, repaired


def fit_clusters(panel: Panel, tau_hats, k: int, restarts: int = 20, seed: int = 0,
                 feature_map: FeatureMap | None = None, init=None,
                 max_iter: int = 100) -> Clustering:
    """Best of ``restarts`` Lloyd runs from random balanced assignments.

    Each run alternates weighted MLE refits per cluster with reassignment of
    every subject to the cluster maximizing its average window
    log-likelihood (ties to the lowest index) until the assignment repeats.
    A cluster left empty receives the worst-fitting subject of the largest
    cluster.  ``init`` adds a warm-start assignment as an extra run.
    """
    N = panel.n_subjects
    if k <= 0:
        raise ValueError("k must be positive")
    if k > N:
        raise ValueError(f"k={k} exceeds the number of subjects {N}")
    if restarts < 1:
        raise ValueError("restarts must be >= 1")
    fm = feature_map or FeatureMap()
    data = WindowData(panel, tau_hats, fm)
    if k == 1:
        W, s = data.fit(np.arange(N))
        obj = float(data.scores(W, s).sum())
        return Clustering(1, np.zeros(N, dtype=np.int64), [data.model(W, s)], obj, 1, True, [obj], [False])
    rng = np.random.default_rng(seed)
    inits = []
    if init is not None:
        a = np.asarray(init, dtype=np.int64).copy()
        if a.shape != (N,) or a.min() < 0 or a.max() >= k:
            raise ValueError("init must assign every subject to a cluster in [0, k)")
        inits.append(a)
    base = np.arange(N) % k
    for _ in range(restarts):
        inits.append(rng.permutation(base))
    best = None
    for a0 in inits:
        _repair(a0, np.zeros(N), k)
        res = _lloyd(data, a0, k, max_iter)
        if best is None or res[2] > best[2]:
            best = res
    assignment, params, obj, converged, history, repaired = best
    return Clustering(k, assignment, [data.model(W, s) for W, s in params], obj, len(inits),
                      converged, history, repaired)


def assign(panel: Panel, tau_hats, models: Sequence[TransitionModel]) -> np.ndarray:
    """Assign every subject to the model with the highest average window log-likelihood."""
    fm = models[0].feature_map
    data = WindowData(panel, tau_hats, fm)
    S = np.stack([data.scores(m.coef.T, m.noise_scale) for m in models], axis=1)
    return np.argmax(S, axis=1)
