"""Segmentation quality: normalized change-point error and adjusted Rand index."""

from __future__ import annotations

import numpy as np

from .envgen import GroundTruth


def cp_error(tau_hat, truth: GroundTruth | np.ndarray) -> float:
    """``sum_i |tau_hat_i - tau_i| / (N tau_i)``."""
    tau_star = truth.tau_star if isinstance(truth, GroundTruth) else np.asarray(truth)
    tau_hat = np.asarray(tau_hat, dtype=float)
    tau_star = np.asarray(tau_star, dtype=float)
    if tau_hat.shape != tau_star.shape:
        raise ValueError("tau_hat and tau_star lengths differ")
    if np.any(tau_star <= 0):
        raise ValueError("true tau must be positive")
    return float(np.sum(np.abs(tau_hat - tau_star) / tau_star) / len(tau_star))


def _comb2(x):
    x = np.asarray(x, dtype=float)
    return x * (x - 1) / 2.0


def adjusted_rand_index(a, b) -> float:
    """Pair-counting ARI from the contingency table.

    When the expected index equals its maximum (both partitions trivial in
    the same way) the value is 1 for identical partitions and 0 otherwise.
    """
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError("labelings must be 1-d and of equal length")
    if len(a) < 2:
        raise ValueError("need at least two items")
    _, ia = np.unique(a, return_inverse=True)
    _, ib = np.unique(b, return_inverse=True)
    table = np.zeros((ia.max() + 1, ib.max() + 1))
    np.add.at(table, (ia, ib), 1)
    index = _comb2(table).sum()
    sa = _comb2(table.sum(axis=1)).sum()
    sb = _comb2(table.sum(axis=0)).sum()
    expected = sa * sb / _comb2(len(a))
    max_index = 0.5 * (sa + sb)
    if np.isclose(max_index, expected):
        return 1.0 if _same_partition(ia, ib) else 0.0
    return float((index - expected) / (max_index - expected))


def _same_partition(ia: np.ndarray, ib: np.ndarray) -> bool:
    pairs = set(zip(ia.tolist(), ib.tolist()))
    return len(pairs) == len(set(ia.tolist())) == len(set(ib.tolist()))
