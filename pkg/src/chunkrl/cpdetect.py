"""Most-recent change point detection for one cluster of subjects.

For a tested interval ``[T - tau, T]`` and a split ``u`` the log-likelihood
ratio compares separate fits on ``[T - tau, u]`` and ``[u, T]`` against the
pooled fit, with the noise scale held at its pooled estimate.  The maximum
over admissible ``u`` is compared to a Monte Carlo threshold and ``tau`` grows
until the first rejection.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import IO, Iterable

import numpy as np

from .model import SIGMA_FLOOR, FeatureMap, design, n_free_params, ridge_solve
from .panel import EmptySelectionError, Panel, Window, check_subjects, check_window

LR_TOL = 1e-9
_MC_BLOCK = 250


@dataclass(frozen=True)
class DetectorConfig:
    """Settings of the sequential test.

    ``epsilon=None`` means ``1/T``; ``tau_start=None`` means the smallest
    admissible value ``2 * boundary + 1``.  ``min_side_obs`` is the minimum
    number of transitions per side of a split, in multiples of the number of
    regression features.
    """

    epsilon: float | None = None
    tau_start: int | None = None
    tau_step: int = 1
    mc_reps: int = 2000
    alpha: float = 0.01
    seed: int = 0
    min_side_obs: float = 1.0

    def __post_init__(self):
        if self.epsilon is not None and not (0.0 < self.epsilon < 0.5):
            raise ValueError("epsilon must lie in (0, 0.5)")
        if self.tau_step < 1:
            raise ValueError("tau_step must be >= 1")
        if self.mc_reps < 100:
            raise ValueError("mc_reps must be >= 100")
        if not (0.0 < self.alpha < 1.0):
            raise ValueError("alpha must lie in (0, 1)")
        if self.min_side_obs < 0:
            raise ValueError("min_side_obs must be non-negative")

    def cutoff(self, horizon: int) -> int:
        eps = 1.0 / horizon if self.epsilon is None else self.epsilon
        return max(1, math.ceil(eps * horizon - 1e-9))

    def boundary(self, horizon: int, n_subjects: int, n_features: int) -> int:
        side = math.ceil(self.min_side_obs * n_features / max(n_subjects, 1) - 1e-9)
        return max(self.cutoff(horizon), side)

    def first_tau(self, horizon: int, boundary: int) -> int:
        if self.tau_start is not None:
            if self.tau_start >= horizon:
                raise ValueError(f"tau_start={self.tau_start} must be < T={horizon}")
            if self.tau_start <= 2 * self.cutoff(horizon):
                raise ValueError("tau_start must exceed twice the boundary cutoff")
            return max(self.tau_start, 2 * boundary + 1)
        return 2 * boundary + 1


@dataclass
class LrScan:
    tested_window: Window
    candidates: np.ndarray
    statistics: np.ndarray
    threshold: float = float("nan")

    @property
    def max_stat(self) -> float:
        return float(self.statistics.max())

    @property
    def argmax_u(self) -> int:
        # ties go to the most recent split
        rev = self.statistics[::-1]
        return int(self.candidates[::-1][int(np.argmax(rev))])

    @property
    def rejected(self) -> bool:
        return bool(self.max_stat > self.threshold)

    def as_dict(self) -> dict[int, float]:
        return {int(u): float(v) for u, v in zip(self.candidates, self.statistics)}


@dataclass(frozen=True)
class TraceRow:
    tau: int
    max_stat: float
    argmax_u: int
    threshold: float
    rejected: bool


@dataclass
class ChangePointEstimate:
    tau_hat: int
    horizon: int
    scan_trace: list[TraceRow] = field(default_factory=list)

    @property
    def location(self) -> int:
        return self.horizon - self.tau_hat

    @property
    def detected(self) -> bool:
        return any(r.rejected for r in self.scan_trace)


class ClusterStats:
    """Per-time sufficient statistics of one cluster, prefix-summed over time.

    ``P_gram[t]`` and ``P_cross[t]`` sum ``phi phi^T`` and ``phi y^T`` over
    the cluster's transitions with source time ``< t``.
    """

    def __init__(self, panel: Panel, subjects: Iterable[int] | None, feature_map: FeatureMap):
        idx = check_subjects(panel, subjects)
        X, Y = design(panel, feature_map)
        X, Y = X[idx], Y[idx]
        self.X, self.Y = X, Y
        self.n_subjects = len(idx)
        self.horizon = panel.horizon
        self.n_features = X.shape[-1]
        self.state_dim = Y.shape[-1]
        gram = np.einsum("itq,itr->tqr", X, X)
        cross = np.einsum("itq,itd->tqd", X, Y)
        q, d = self.n_features, self.state_dim
        self.P_gram = np.concatenate([np.zeros((1, q, q)), np.cumsum(gram, axis=0)])
        self.P_cross = np.concatenate([np.zeros((1, q, d)), np.cumsum(cross, axis=0)])

    def pooled(self, a: int, b: int) -> tuple[np.ndarray, np.ndarray]:
        """Pooled ridge coefficients on ``[a, b)`` and the residuals ``(N, b - a, d)``."""
        W = ridge_solve(self.P_gram[b] - self.P_gram[a], self.P_cross[b] - self.P_cross[a])
        return W, self.Y[:, a:b] - self.X[:, a:b] @ W

    def null_sigma(self, a: int, b: int) -> np.ndarray:
        _, resid = self.pooled(a, b)
        return np.maximum(SIGMA_FLOOR, np.sqrt(np.mean(resid * resid, axis=(0, 1))))

    def lr(self, start: int, end: int, us: np.ndarray, sigma: np.ndarray | None = None) -> np.ndarray:
        """LR statistics for splits ``us`` of the window ``[start, end]``.

        Each side's RSS is expanded around the pooled residuals ``E``:
        the coefficient change ``D`` of each side enters only through small
        terms, so the reduction is formed from small terms without cancellation.
        """
        us = np.asarray(us, dtype=np.int64)
        W0, resid = self.pooled(start, end)
        if sigma is None:
            sigma = np.maximum(SIGMA_FLOOR, np.sqrt(np.mean(resid * resid, axis=(0, 1))))
        else:
            sigma = np.broadcast_to(np.asarray(sigma, float), (self.state_dim,))
        ce = np.einsum("itq,itd->tqd", self.X[:, start:end], resid)
        P = np.concatenate([np.zeros((1,) + ce.shape[1:]), np.cumsum(ce, axis=0)])
        B1 = P[us - start]
        B2 = P[-1][None] - B1
        G1 = self.P_gram[us] - self.P_gram[start]
        G2 = self.P_gram[end] - self.P_gram[us]
        C1 = self.P_cross[us] - self.P_cross[start]
        C2 = self.P_cross[end] - self.P_cross[us]
        drss = _reduction(G1, C1, B1, W0) + _reduction(G2, C2, B2, W0)
        return np.maximum(np.sum(drss / (2.0 * sigma**2), axis=-1), 0.0)


def _reduction(G, C, B, W0) -> np.ndarray:
    """RSS decrease of one side's ridge fit relative to the pooled fit.

    With ``D = W - W0`` the side RSS is ``E'E - 2 D'B + D'GD`` where ``B``
    is the side's ``X'E``.
    """
    D = ridge_solve(G, C) - W0
    return 2.0 * np.sum(D * B, axis=-2) - np.einsum("...qd,...qr,...rd->...d", D, G, D)


def lr_statistic(panel: Panel, cluster: Iterable[int] | None, window: Window | tuple[int, int],
                 u: int, feature_map: FeatureMap | None = None,
                 sigma: float | np.ndarray | None = None) -> float:
    """Log-likelihood ratio of a split at ``u`` against the pooled fit.

    The noise scale is the pooled MLE on ``window`` unless ``sigma`` is given.
    """
    fm = feature_map or FeatureMap()
    w = check_window(panel, window)
    if not (w.start < u < w.end):
        raise IndexError(f"split u={u} outside ({w.start}, {w.end})")
    stats = ClusterStats(panel, cluster, fm)
    return float(stats.lr(w.start, w.end, np.array([u]), sigma)[0])


def _candidate_offsets(n_times: int, n_candidates: int) -> np.ndarray:
    if n_candidates < 1:
        raise ValueError("need at least one candidate split")
    if n_candidates > n_times - 1:
        raise ValueError("more candidates than interior split points")
    first2 = n_times - n_candidates + 1
    if first2 % 2:
        raise ValueError("candidate range must be symmetric within the window")
    first = first2 // 2
    return np.arange(first, first + n_candidates)


def simulate_max_stats(n_times: int, n_candidates: int, dof: int, mc_reps: int, seed: int) -> np.ndarray:
    """Replicates of the null max statistic, in generation order.

    Replicates are drawn in blocks of 250 from counter-keyed substreams so
    the values do not depend on how the blocks are scheduled.
    """
    ks = _candidate_offsets(n_times, n_candidates)
    stats = np.empty(mc_reps)
    weight = ks * (n_times - ks) / n_times
    for block, lo in enumerate(range(0, mc_reps, _MC_BLOCK)):
        hi = min(lo + _MC_BLOCK, mc_reps)
        ss = np.random.SeedSequence(seed, spawn_key=(n_times, n_candidates, dof, block))
        rng = np.random.Generator(np.random.PCG64(ss))
        z = rng.standard_normal((hi - lo, n_times, dof))
        cs = np.cumsum(z, axis=1)
        pre = cs[:, ks - 1, :]
        total = cs[:, -1:, :]
        diff = pre / ks[None, :, None] - (total - pre) / (n_times - ks)[None, :, None]
        stat = 0.5 * weight[None, :] * np.sum(diff * diff, axis=-1)
        stats[lo:hi] = stat.max(axis=1)
    return stats


@lru_cache(maxsize=4096)
def _threshold_cached(n_times: int, n_candidates: int, dof: int, mc_reps: int,
                      alpha: float, seed: int) -> float:
    stats = np.sort(simulate_max_stats(n_times, n_candidates, dof, mc_reps, seed))
    n_above = max(1, math.ceil(alpha * mc_reps - 1e-9))
    return float(stats[mc_reps - n_above])


def simulate_threshold(n_times: int, n_candidates: int, dof: int,
                       config: DetectorConfig | None = None) -> float:
    """Monte Carlo rejection threshold for the max-LR statistic.

    Each replicate draws i.i.d. ``dof``-dimensional standard normal vectors on
    a window of ``n_times`` steps and takes the largest
    ``(n1 n2 / n) |mean_pre - mean_post|^2 / 2`` over the symmetric candidate
    splits; the threshold is the ``ceil(alpha * reps)``-th largest replicate.
    Only per-time sums enter the statistic and it is invariant to the number
    of subjects contributing to each time step, so one vector per time step
    is drawn.
    """
    cfg = config or DetectorConfig()
    if dof < 1:
        raise ValueError("dof must be >= 1")
    return _threshold_cached(int(n_times), int(n_candidates), int(dof), cfg.mc_reps,
                             float(cfg.alpha), int(cfg.seed))


def lr_scan(stats: ClusterStats, tau: int, config: DetectorConfig, boundary: int,
            dof: int) -> LrScan:
    T = stats.horizon
    start = T - tau
    us = np.arange(start + boundary, T - boundary + 1)
    values = stats.lr(start, T, us)
    thr = simulate_threshold(tau, len(us), dof, config)
    return LrScan(Window(start, T), us, values, thr)


def scan_most_recent(panel: Panel, cluster: Iterable[int] | None = None,
                     config: DetectorConfig | None = None,
                     feature_map: FeatureMap | None = None) -> ChangePointEstimate:
    """Grow ``tau`` until the pooled-vs-split test rejects.

    Returns the largest ``tau`` whose null was not rejected (``T`` if none
    was).  With ``tau_step > 1`` a coarse pass is refined at step 1 over the
    last coarse interval.
    """
    cfg = config or DetectorConfig()
    fm = feature_map or FeatureMap()
    idx = check_subjects(panel, cluster)
    T = panel.horizon
    stats = ClusterStats(panel, idx, fm)
    q = stats.n_features
    dof = n_free_params(fm, panel.state_dim)
    b = cfg.boundary(T, len(idx), q)
    tau0 = cfg.first_tau(T, b)
    trace: list[TraceRow] = []

    def test(tau: int) -> bool:
        sc = lr_scan(stats, tau, cfg, b, dof)
        trace.append(TraceRow(tau, sc.max_stat, sc.argmax_u, sc.threshold, sc.rejected))
        return sc.rejected

    if tau0 > T:
        return ChangePointEstimate(T, T, trace)
    coarse = list(range(tau0, T + 1, cfg.tau_step))
    if coarse[-1] != T:
        coarse.append(T)
    prev = None
    for tau in coarse:
        if test(tau):
            if prev is None:
                return ChangePointEstimate(tau - 1, T, trace)
            for fine in range(prev + 1, tau):
                if test(fine):
                    return ChangePointEstimate(fine - 1, T, trace)
            return ChangePointEstimate(tau - 1, T, trace)
        prev = tau
    return ChangePointEstimate(T, T, trace)


def write_trace_csv(estimate: ChangePointEstimate, sink: IO[str]) -> None:
    w = csv.writer(sink, lineterminator="\n")
    w.writerow(["tau", "max_stat", "argmax_u", "threshold", "rejected"])
    for r in estimate.scan_trace:
        w.writerow([r.tau, repr(r.max_stat), r.argmax_u, repr(r.threshold), int(r.rejected)])


__all__ = [
    "ChangePointEstimate", "ClusterStats", "DetectorConfig", "EmptySelectionError", "LrScan",
    "TraceRow", "lr_scan", "lr_statistic", "scan_most_recent", "simulate_max_stats", "simulate_threshold",
    "write_trace_csv",
]
