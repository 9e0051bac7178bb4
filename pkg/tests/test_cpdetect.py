import io

import numpy as np
import pytest

from chunkrl.cpdetect import (ClusterStats, DetectorConfig, lr_scan, lr_statistic, scan_most_recent,
                              simulate_max_stats, simulate_threshold, write_trace_csv)
from chunkrl.envgen import generate_offline, stationary_spec, two_cluster_spec
from chunkrl.model import INTERCEPT_ONLY, FeatureMap, TransitionModel, fit_mle, log_likelihood
from chunkrl.panel import Panel, Window
from conftest import random_panel


def _series_panel(y):
    """Subjects whose next states are the rows of ``y`` (N, T)."""
    y = np.atleast_2d(y)
    n, T = y.shape
    s = np.concatenate([np.zeros((n, 1)), y], axis=1)
    return Panel(s[..., None], np.ones((n, T + 1), int), np.zeros((n, T + 1)))


def naive_lr(panel, cluster, window, u, fm):
    """Separate refits and direct density sums, sigma held at the pooled fit."""
    pooled = fit_mle(panel, cluster, window, fm)
    sigma = pooled.noise_scale
    left = fit_mle(panel, cluster, Window(window.start, u), fm)
    right = fit_mle(panel, cluster, Window(u, window.end), fm)
    left = TransitionModel(left.coef, sigma, fm)
    right = TransitionModel(right.coef, sigma, fm)
    return (log_likelihood(left, panel, cluster, Window(window.start, u))
            + log_likelihood(right, panel, cluster, Window(u, window.end))
            - log_likelihood(pooled, panel, cluster, window))


def test_identical_next_states_give_zero_lr():
    p = _series_panel(np.full((2, 10), 3.0))
    assert lr_statistic(p, [0, 1], Window(0, 10), 4, INTERCEPT_ONLY) == pytest.approx(0.0, abs=1e-9)


@pytest.mark.parametrize("seed", range(10))
def test_intercept_lr_is_two_sample_statistic(seed):
    rng = np.random.default_rng(seed)
    y = rng.normal(size=(1, 20)) + np.r_[np.zeros(8), np.ones(12)]
    p = _series_panel(y)
    for u in (3, 8, 15):
        a, b = y[0, :u], y[0, u:]
        n1, n2 = len(a), len(b)
        expected = n1 * n2 / (n1 + n2) * (a.mean() - b.mean()) ** 2 / 2
        got = lr_statistic(p, [0], Window(0, 20), u, INTERCEPT_ONLY, sigma=1.0)
        assert got == pytest.approx(expected, abs=1e-8)


@pytest.mark.parametrize("seed", range(6))
def test_lr_matches_naive_refits(seed):
    p = random_panel(seed, n=6, horizon=30, d=2)
    fm = FeatureMap()
    w = Window(4, 30)
    for u in (10, 17, 24):
        assert lr_statistic(p, range(6), w, u, fm) == pytest.approx(naive_lr(p, range(6), w, u, fm), abs=1e-8)


def test_lr_split_outside_window():
    p = random_panel(0, n=2, horizon=10)
    with pytest.raises(IndexError):
        lr_statistic(p, [0, 1], Window(2, 8), 8)
    with pytest.raises(IndexError):
        lr_statistic(p, [0, 1], Window(2, 8), 1)


def test_threshold_is_twentieth_largest():
    cfg = DetectorConfig(mc_reps=2000, alpha=0.01, seed=3)
    thr = simulate_threshold(30, 27, 4, cfg)
    stats = simulate_max_stats(30, 27, 4, 2000, 3)
    assert thr == np.sort(stats)[-20]
    assert np.sum(stats > thr) == 19


def test_threshold_deterministic():
    cfg = DetectorConfig(seed=11)
    a = simulate_threshold(25, 22, 4, cfg)
    b = float(np.sort(simulate_max_stats(25, 22, 4, 2000, 11))[-20])
    assert a == b == simulate_threshold(25, 22, 4, cfg)
    assert a != simulate_threshold(25, 22, 4, DetectorConfig(seed=12))


def test_threshold_chi_square_limit():
    # single midpoint split of a long grid, dof 1: half a squared standard normal
    thr = simulate_threshold(1000, 1, 1, DetectorConfig(mc_reps=20000, seed=0))
    assert abs(thr - 6.635 / 2) / (6.635 / 2) < 0.10


def test_threshold_rejects_bad_candidates():
    with pytest.raises(ValueError):
        simulate_threshold(10, 0, 1)
    with pytest.raises(ValueError):
        simulate_threshold(10, 1, 0)


def test_config_validation():
    with pytest.raises(ValueError):
        DetectorConfig(epsilon=0.6)
    with pytest.raises(ValueError):
        DetectorConfig(mc_reps=50)
    with pytest.raises(ValueError):
        DetectorConfig(alpha=1.0)
    p = random_panel(0, n=3, horizon=10, d=1)
    with pytest.raises(ValueError):
        scan_most_recent(p, config=DetectorConfig(tau_start=10))
    with pytest.raises(ValueError):
        scan_most_recent(p, config=DetectorConfig(tau_start=2))


def test_stationary_scan_returns_full_horizon():
    full = 0
    for seed in range(10):
        rng = np.random.default_rng(seed)
        p = _series_panel(rng.normal(size=(1, 40)))
        est = scan_most_recent(p, [0], DetectorConfig(), INTERCEPT_ONLY)
        full += est.tau_hat == 40
        assert est.location == 40 - est.tau_hat
    assert full >= 8


def test_planted_mean_shift_located_exactly():
    rng = np.random.default_rng(5)
    y = rng.normal(size=50)
    y[30:] += 10.0
    p = _series_panel(y)
    est = scan_most_recent(p, [0], DetectorConfig(), INTERCEPT_ONLY)
    # exhaustive CUSUM argmax over the window the detector stopped at agrees
    last = est.scan_trace[-1]
    assert last.rejected
    seg = y[50 - last.tau:]
    k = np.arange(1, len(seg))
    cus = [k_ * (len(seg) - k_) / len(seg) * (seg[:k_].mean() - seg[k_:].mean()) ** 2 for k_ in k]
    assert 50 - last.tau + 1 + int(np.argmax(cus)) == 30
    assert est.location == 30


def test_two_cluster_change_located():
    # about three in four seeds hit the change exactly (measured over 100 seeds)
    locs = np.array([scan_most_recent(generate_offline(two_cluster_spec(seed=s))[0], range(25)).location
                     for s in range(20)])
    assert np.sum(locs == 35) >= 12
    assert np.sum(np.abs(locs - 35) <= 3) >= 18


def test_trace_consistency_and_csv():
    p, _ = generate_offline(two_cluster_spec(seed=1))
    est = scan_most_recent(p, range(25))
    for row in est.scan_trace:
        assert row.rejected == (row.max_stat > row.threshold)
        assert row.max_stat >= -1e-9
    assert sum(r.rejected for r in est.scan_trace) <= 1
    buf = io.StringIO()
    write_trace_csv(est, buf)
    lines = buf.getvalue().splitlines()
    assert lines[0] == "tau,max_stat,argmax_u,threshold,rejected"
    assert len(lines) == len(est.scan_trace) + 1


def test_lr_scan_fields():
    p, _ = generate_offline(stationary_spec(seed=2))
    stats = ClusterStats(p, None, FeatureMap())
    sc = lr_scan(stats, 20, DetectorConfig(), 1, 4)
    assert sc.tested_window == Window(30, 50)
    assert sc.candidates[0] == 31 and sc.candidates[-1] == 49
    assert sc.max_stat == max(sc.as_dict().values())
    assert sc.statistics[list(sc.candidates).index(sc.argmax_u)] == sc.max_stat


def test_coarse_step_refines():
    p, _ = generate_offline(two_cluster_spec(seed=2))
    fine = scan_most_recent(p, range(25))
    coarse = scan_most_recent(p, range(25), DetectorConfig(tau_step=5))
    assert coarse.tau_hat == fine.tau_hat
    assert len(coarse.scan_trace) < len(fine.scan_trace)


def test_more_data_raises_expected_max_lr():
    # doubling the subjects on both sides of a fixed true split
    small, large = [], []
    for seed in range(20):
        p, _ = generate_offline(two_cluster_spec(sizes=(40, 10), seed=seed))
        stats_small = ClusterStats(p, range(20), FeatureMap())
        stats_large = ClusterStats(p, range(40), FeatureMap())
        small.append(stats_small.lr(25, 50, np.arange(26, 50)).max())
        large.append(stats_large.lr(25, 50, np.arange(26, 50)).max())
    assert np.mean(large) >= np.mean(small)
