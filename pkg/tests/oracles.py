"""Slow, direct reference implementations used as test oracles.

Everything here recomputes from raw panel arrays with ``numpy.linalg.lstsq``
and explicit loops; nothing reuses the package's prefix sums or Lloyd code.
"""

import math
from itertools import product

import numpy as np

from chunkrl.cpdetect import DetectorConfig, simulate_threshold


def features(s, a):
    s = np.atleast_1d(s)
    return np.concatenate([[1.0], s, [a], a * s])


def rows(panel, subjects, start, end):
    X, Y = [], []
    for i in subjects:
        for t in range(start, end):
            X.append(features(panel.states[i, t], panel.actions[i, t]))
            Y.append(panel.states[i, t + 1])
    return np.array(X), np.array(Y)


def loglik_sigma_fixed(X, Y, W, sigma):
    r = (Y - X @ W) / sigma
    return float(np.sum(-0.5 * r * r - np.log(sigma) - 0.5 * math.log(2 * math.pi)))


def naive_lr(panel, subjects, start, end, u):
    """Pooled fit vs two split fits on ``[start, end)``, sigma at the pooled MLE."""
    X, Y = rows(panel, subjects, start, end)
    W0 = np.linalg.lstsq(X, Y, rcond=None)[0]
    sigma = np.maximum(1e-6, np.sqrt(np.mean((Y - X @ W0) ** 2, axis=0)))
    X1, Y1 = rows(panel, subjects, start, u)
    X2, Y2 = rows(panel, subjects, u, end)
    W1 = np.linalg.lstsq(X1, Y1, rcond=None)[0]
    W2 = np.linalg.lstsq(X2, Y2, rcond=None)[0]
    return (loglik_sigma_fixed(X1, Y1, W1, sigma) + loglik_sigma_fixed(X2, Y2, W2, sigma)
            - loglik_sigma_fixed(X, Y, W0, sigma))


def naive_scan(panel, subjects, config=None):
    """Sequential most-recent change point search by brute-force refits."""
    cfg = config or DetectorConfig()
    T, d = panel.horizon, panel.state_dim
    q = 2 * d + 2
    eps = 1.0 / T if cfg.epsilon is None else cfg.epsilon
    b = max(max(1, math.ceil(eps * T - 1e-9)), math.ceil(cfg.min_side_obs * q / len(subjects) - 1e-9))
    for tau in range(2 * b + 1, T + 1):
        start = T - tau
        us = range(start + b, T - b + 1)
        stat = max(naive_lr(panel, subjects, start, T, u) for u in us)
        if stat > simulate_threshold(tau, len(us), q * d, cfg):
            return tau - 1
    return T


def weighted_objective(panel, assignment, tau):
    """Sum over clusters of the weighted window log-likelihood at its weighted MLE."""
    T, d = panel.horizon, panel.state_dim
    total = 0.0
    for j in np.unique(assignment):
        members = np.flatnonzero(assignment == j)
        Xs, Ys, ws = [], [], []
        for i in members:
            X, Y = rows(panel, [i], T - tau[i], T)
            Xs.append(X); Ys.append(Y); ws.append(np.full(len(X), 1.0 / tau[i]))
        X, Y, w = np.vstack(Xs), np.vstack(Ys), np.concatenate(ws)
        sw = np.sqrt(w)[:, None]
        W = np.linalg.lstsq(X * sw, Y * sw, rcond=None)[0]
        resid = Y - X @ W
        var = np.maximum(1e-12, np.sum(w[:, None] * resid ** 2, axis=0) / len(members))
        sigma = np.sqrt(var)
        r = resid / sigma
        ll = -0.5 * r * r - np.log(sigma) - 0.5 * math.log(2 * math.pi)
        total += float(np.sum(w[:, None] * ll))
    return total


def partitions(n, k_max):
    """Every set partition of ``range(n)`` into at most ``k_max`` blocks, canonical labels."""
    seen = set()
    for labels in product(range(k_max), repeat=n):
        order = {}
        canon = tuple(order.setdefault(v, len(order)) for v in labels)
        if canon not in seen:
            seen.add(canon)
            yield np.array(canon)


def brute_force_ic(panel, k_max, config=None):
    """Best IC over all partitions, each cluster's window found by ``naive_scan``."""
    N = panel.n_subjects
    best = (-np.inf, None, None)
    for a in partitions(N, k_max):
        tau = np.empty(N, dtype=int)
        for j in np.unique(a):
            members = np.flatnonzero(a == j)
            tau[members] = naive_scan(panel, members, config)
        k = int(a.max()) + 1
        ic = weighted_objective(panel, a, tau) - k * math.log(N)
        if ic > best[0]:
            best = (ic, a, tau)
    return best
