"""Replication runners: offline segmentation accuracy and online policy value."""

from __future__ import annotations

import csv
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import IO, Sequence

import numpy as np

from .alternate import InitialSpec, SegmentationResult, oracle_initial, select, zero_initial
from .cluster import fit_clusters
from .cpdetect import DetectorConfig
from .envgen import (DEFAULT_REWARD, ClusterSpec, Dynamics, OnlineEnvironment, ScenarioSpec, Segment,
                     generate_offline, generate_preset, scenario_label)
from .metrics import adjusted_rand_index, cp_error
from .panel import Panel
from .policy import RegressorSpec, fitted_q_iteration

BASELINES = ("proposed", "oracle", "dh", "homogeneous", "stationary")


def _map(fn, items, jobs: int):
    items = list(items)
    if jobs > 1 and len(items) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            return list(ex.map(fn, items))
    return [fn(x) for x in items]


# ---------------------------------------------------------------------------
# offline


def make_initial(label: str, truth, horizon: int, rng: np.random.Generator) -> InitialSpec:
    """``oracle``, ``random``, ``zero`` or ``tau<n>`` (constant initial window)."""
    if label == "oracle":
        return oracle_initial(truth.tau_star)
    if label == "random":
        return InitialSpec(horizon - int(rng.integers(0, horizon)), "random")
    if label == "zero":
        return zero_initial(horizon)
    if label.startswith("tau"):
        return InitialSpec(min(int(label[3:]), horizon), label)
    raise ValueError(f"unknown initial {label!r}")


@dataclass(frozen=True)
class Arm:
    name: str
    initials: tuple[str, ...]
    k_range: tuple[int, ...]


FIG3_ARMS = (
    Arm("oracle", ("oracle",), (2,)),
    Arm("random", ("random",), (2,)),
    Arm("zero", ("zero",), (2,)),
    Arm("ic_oracle_random", ("oracle", "random"), (2,)),
    Arm("ic_oracle_zero", ("oracle", "zero"), (2,)),
)

K_SELECTION_ARMS = (
    Arm("k1", ("tau12",), (1,)),
    Arm("k2", ("tau12",), (2,)),
    Arm("k3", ("tau12",), (3,)),
    Arm("k4", ("tau12",), (4,)),
    Arm("ic", ("tau12",), (1, 2, 3, 4)),
)

SEMI_SYNTHETIC_ARMS = (Arm("ic", ("tau15", "tau20"), (2, 3, 4)),)


@dataclass
class OfflineConfig:
    preset: str = "s5_1_offline_abrupt"
    arms: tuple[Arm, ...] = K_SELECTION_ARMS
    detector: DetectorConfig = field(default_factory=DetectorConfig)
    restarts: int = 20
    max_iter: int = 10
    delta: float = 0.8


OFFLINE_COLUMNS = ["replication", "seed", "arm", "k", "cp_error", "ari", "ic", "iterations", "error"]


def _offline_rep(args) -> list[dict]:
    rep, seed, cfg = args
    rows = []
    try:
        panel, truth = generate_preset(cfg.preset, seed=seed, delta=cfg.delta)
    except Exception as exc:
        return [dict(replication=rep, seed=seed, arm=a.name, k=0, cp_error=math.nan, ari=math.nan,
                     ic=math.nan, iterations=0, error=str(exc)) for a in cfg.arms]
    rng = np.random.default_rng([seed, 7])
    cache = {}
    for arm in cfg.arms:
        try:
            inits = []
            for lab in arm.initials:
                if lab not in cache:
                    cache[lab] = make_initial(lab, truth, panel.horizon, rng)
                inits.append(cache[lab])
            res = select(panel, inits, arm.k_range, cfg.detector, cfg.restarts, seed,
                         max_iter=cfg.max_iter)
            rows.append(dict(replication=rep, seed=seed, arm=arm.name, k=res.k,
                             cp_error=cp_error(res.tau_hats, truth),
                             ari=adjusted_rand_index(res.assignment, truth.labels),
                             ic=res.ic, iterations=res.iterations, error=""))
        except Exception as exc:
            rows.append(dict(replication=rep, seed=seed, arm=arm.name, k=0, cp_error=math.nan,
                             ari=math.nan, ic=math.nan, iterations=0, error=f"{type(exc).__name__}: {exc}"))
    return rows


def run_offline_experiment(config: OfflineConfig | None = None, n_reps: int = 20,
                           seeds: Sequence[int] | None = None, jobs: int = 1) -> list[dict]:
    """One row per (replication, arm) with CP error, ARI, selected k and IC."""
    cfg = config or OfflineConfig()
    seeds = list(range(n_reps)) if seeds is None else list(seeds)
    out = _map(_offline_rep, [(r, s, cfg) for r, s in enumerate(seeds)], jobs)
    return [row for rows in out for row in rows]


def summarize_offline(rows: list[dict]) -> list[dict]:
    arms = list(dict.fromkeys(r["arm"] for r in rows))
    out = []
    for arm in arms:
        ok = [r for r in rows if r["arm"] == arm and not r["error"]]
        failed = sum(1 for r in rows if r["arm"] == arm and r["error"])
        cp = np.array([r["cp_error"] for r in ok])
        ari = np.array([r["ari"] for r in ok])
        ks = np.array([r["k"] for r in ok])
        out.append({
            "arm": arm, "n_ok": len(ok), "n_failed": failed,
            "cp_error_median": float(np.median(cp)) if len(ok) else math.nan,
            "cp_error_mean": float(np.mean(cp)) if len(ok) else math.nan,
            "ari_median": float(np.median(ari)) if len(ok) else math.nan,
            "ari_mean": float(np.mean(ari)) if len(ok) else math.nan,
            "k_mode": int(np.bincount(ks).argmax()) if len(ok) else 0,
        })
    return out


def write_rows(rows: list[dict], sink: IO[str], columns: Sequence[str] | None = None) -> None:
    cols = list(columns or (rows[0].keys() if rows else []))
    w = csv.writer(sink, lineterminator="\n")
    w.writerow(cols)
    for r in rows:
        w.writerow([repr(float(r[c])) if isinstance(r[c], (float, np.floating)) else r[c] for c in cols])


# ---------------------------------------------------------------------------
# online


@dataclass(frozen=True)
class OnlineProtocol:
    batch_len: int = 25
    start: int = 50
    end: int = 250
    epsilon: float = 0.05
    change_rate: float = 1 / 40
    baselines: tuple[str, ...] = BASELINES
    tau0: int = 5
    k_range: tuple[int, ...] = (1, 2, 3, 4)
    coefs: tuple[float, float] = (-0.5, 0.5)
    noise: float = 0.25
    cluster_sizes: tuple[int, int] = (25, 25)
    offline_changes: tuple[int, int] = (35, 15)
    gamma: float = 0.9
    n_iters: int = 50
    regressor: RegressorSpec = field(default_factory=lambda: RegressorSpec("tree", cv=True))
    detector: DetectorConfig = field(default_factory=DetectorConfig)
    restarts: int = 10

    def __post_init__(self):
        if self.end <= self.start:
            raise ValueError("empty online horizon: end must exceed start")
        if (self.end - self.start) % self.batch_len:
            raise ValueError("end - start must be a multiple of batch_len")
        if self.change_rate <= 0 or self.batch_len <= 0:
            raise ValueError("rates and batch length must be positive")
        unknown = set(self.baselines) - set(BASELINES)
        if unknown:
            raise ValueError(f"unknown baselines {sorted(unknown)}")

    @property
    def n_batches(self) -> int:
        return (self.end - self.start) // self.batch_len


@dataclass
class ValueReport:
    values: dict[str, list[float]]
    seeds: list[int]
    rewards: dict[str, list[np.ndarray]] = field(default_factory=dict)
    flagged: dict[str, list[int]] = field(default_factory=dict)
    scenarios: list[list[str]] = field(default_factory=list)

    def medians(self) -> dict[str, float]:
        return {b: float(np.median(v)) for b, v in self.values.items()}

    def rows(self) -> list[dict]:
        return [{"replication": r, "seed": s, "baseline": b, "value": self.values[b][r]}
                for b in self.values for r, s in enumerate(self.seeds)]


@dataclass
class _Schedule:
    """Regime of each subject for every source time, plus oracle bookkeeping."""

    regimes: np.ndarray        # (N, end) regime index per source time
    last_change: np.ndarray    # (N, end + 1) first source time of the current regime run
    cluster_of: np.ndarray     # (N,) environment cluster
    labels: list[str]


def _schedule(protocol: OnlineProtocol, rng: np.random.Generator, env: OnlineEnvironment) -> _Schedule:
    n1, n2 = protocol.cluster_sizes
    cluster_of = np.repeat([0, 1], [n1, n2])
    end = protocol.end
    c1, c2 = protocol.offline_changes
    reg = np.zeros((2, end), dtype=np.int64)
    # offline part: cluster 1 goes coef[0] -> coef[1] at c1, cluster 2 coef[1] -> coef[0] at c2
    reg[0, :c1], reg[0, c1:] = 0, 1
    reg[1, :c2], reg[1, c2:] = 1, 0
    labels = []
    arrivals = env.arrivals(protocol.start, end, rng)
    current = reg[:, protocol.start].copy()
    for c in arrivals:
        new = env.advance_regimes(current, rng)
        labels.append(scenario_label(current, new))
        reg[:, c:] = new[:, None]
        current = new
    regimes = reg[cluster_of]
    last = np.zeros((len(cluster_of), end + 1), dtype=np.int64)
    for t in range(1, end + 1):
        same = regimes[:, t - 1] == regimes[:, max(t - 2, 0)]
        last[:, t] = np.where(same & (t > 1), last[:, t - 1], t - 1)
    return _Schedule(regimes, last, cluster_of, labels)


def _oracle_segmentation(sched: _Schedule, now: int) -> tuple[np.ndarray, np.ndarray]:
    """Subjects sharing their current dynamics form a cluster; tau = min stationary run."""
    cur = sched.regimes[:, now - 1]
    _, assignment = np.unique(cur, return_inverse=True)
    tau = np.empty(len(cur), dtype=np.int64)
    for k in np.unique(assignment):
        m = assignment == k
        tau[m] = now - sched.last_change[m, now].max()
    return assignment, tau


def _segment_stationary(panel: Panel, protocol: OnlineProtocol, seed: int) -> np.ndarray:
    best, best_ic = None, -np.inf
    N = panel.n_subjects
    for k in protocol.k_range:
        if k > N:
            continue
        cl = fit_clusters(panel, panel.horizon, k, protocol.restarts, seed)
        ic = cl.objective - k * math.log(N)
        if ic > best_ic:
            best, best_ic = cl.assignment, ic
    return best


def _fit_policies(states, actions, rewards, assignment, starts, now, protocol, seed):
    """One FQI policy per cluster on its members' transitions from ``starts[i]`` to ``now``."""
    policies = {}
    for k in np.unique(assignment):
        members = np.flatnonzero(assignment == k)
        s0 = int(starts[members[0]])
        S = states[members, s0:now].reshape(-1, 1)
        A = actions[members, s0:now].reshape(-1)
        R = rewards[members, s0:now].reshape(-1)
        S2 = states[members, s0 + 1:now + 1].reshape(-1, 1)
        policies[int(k)] = fitted_q_iteration(S, A, R, S2, protocol.regressor, protocol.gamma,
                                              protocol.n_iters, epsilon=protocol.epsilon, seed=seed)
    return policies


def _run_online_rep(args) -> tuple[dict[str, float], dict[str, np.ndarray], dict[str, list[int]], list[str]]:
    protocol, seed = args
    env = OnlineEnvironment((Dynamics.scalar(protocol.coefs[0], protocol.noise),
                             Dynamics.scalar(protocol.coefs[1], protocol.noise)),
                            rate=protocol.change_rate)
    root = np.random.SeedSequence(seed)
    s_off, s_sched, s_noise, s_explore = root.spawn(4)
    n1, n2 = protocol.cluster_sizes
    T0, end, L = protocol.start, protocol.end, protocol.batch_len
    spec = _offline_spec(protocol, int(s_off.generate_state(1)[0]))
    offline, _ = generate_offline(spec)
    sched = _schedule(protocol, np.random.default_rng(s_sched), env)
    N = n1 + n2
    noise = np.random.default_rng(s_noise).standard_normal((N, end))
    explore_seeds = s_explore.spawn(len(BASELINES))
    values, rewards_out, flagged = {}, {}, {}
    for b_idx, base in enumerate(BASELINES):
        if base not in protocol.baselines:
            continue
        rng = np.random.default_rng(explore_seeds[b_idx])
        states = np.zeros((N, end + 1))
        actions = np.ones((N, end + 1), dtype=np.int64)  # placeholder for undecided steps
        rewards = np.zeros((N, end + 1))
        states[:, :T0 + 1] = offline.states[:, :, 0]
        actions[:, :T0] = offline.actions[:, :T0]
        rewards[:, :T0] = offline.rewards[:, :T0]
        t_star = 0
        prev = None
        flags = []
        for b in range(protocol.n_batches):
            now = T0 + b * L
            try:
                assignment, starts, t_star = _segment(base, states, actions, rewards, now, t_star,
                                                      protocol, sched, seed)
                prev = (assignment, starts)
            except Exception:
                if prev is None:
                    assignment, starts = np.zeros(N, dtype=np.int64), np.zeros(N, dtype=np.int64)
                else:
                    assignment, starts = prev
                flags.append(b)
            pols = _fit_policies(states, actions, rewards, assignment, starts, now, protocol, seed)
            for t in range(now, now + L):
                a = np.empty(N, dtype=np.int64)
                for k, pol in pols.items():
                    m = assignment == k
                    a[m] = pol.act_batch(states[m, t], rng)
                nxt, r = env.step(states[:, t][:, None], a, sched.regimes[:, t], noise[:, t][:, None])
                actions[:, t] = a
                rewards[:, t] = r
                states[:, t + 1] = nxt[:, 0]
        online_r = rewards[:, T0:end]
        values[base] = float(online_r.mean())
        rewards_out[base] = online_r
        flagged[base] = flags
    return values, rewards_out, flagged, sched.labels


def _offline_spec(protocol: OnlineProtocol, seed: int) -> ScenarioSpec:
    """Offline history on ``[0, start]``: cluster 1 moves from regime 0 to 1, cluster 2 from 1 to 0."""
    d0 = Dynamics.scalar(protocol.coefs[0], protocol.noise)
    d1 = Dynamics.scalar(protocol.coefs[1], protocol.noise)
    T = protocol.start
    c1, c2 = protocol.offline_changes
    n1, n2 = protocol.cluster_sizes
    clusters = (ClusterSpec(n1, (Segment(0, c1, d0), Segment(c1, T, d1))),
                ClusterSpec(n2, (Segment(0, c2, d1), Segment(c2, T, d0))))
    return ScenarioSpec(clusters, T, DEFAULT_REWARD, 0.5, (0.0,), (0.5,), seed)


def _segment(base, states, actions, rewards, now, t_star, protocol, sched, seed):
    N = states.shape[0]
    if base == "oracle":
        assignment, tau = _oracle_segmentation(sched, now)
        return assignment, now - tau, t_star
    if base == "dh":
        return np.zeros(N, dtype=np.int64), np.zeros(N, dtype=np.int64), 0
    full = Panel(states[:, :now + 1, None], actions[:, :now + 1], rewards[:, :now + 1])
    if base == "stationary":
        return _segment_stationary(full, protocol, seed), np.zeros(N, dtype=np.int64), 0
    sub = full.slice_time(t_star, now)
    ks = protocol.k_range if base == "proposed" else (1,)
    tau0 = min(protocol.tau0, sub.horizon)
    res: SegmentationResult = select(sub, [InitialSpec(tau0, f"tau{tau0}")], ks, protocol.detector,
                                     protocol.restarts, seed)
    starts = now - res.tau_hats
    if np.any(res.tau_hats < sub.horizon):
        t_star = int(starts.max())
    return res.assignment, starts, t_star


def run_online_experiment(protocol: OnlineProtocol | None = None, seeds: Sequence[int] = range(20),
                          jobs: int = 1) -> ValueReport:
    """Average online reward of each baseline, one value per replication.

    All baselines of a replication share the offline data, the change
    schedule and the transition noise; each draws its own exploration.
    """
    protocol = protocol or OnlineProtocol()
    seeds = list(seeds)
    outs = _map(_run_online_rep, [(protocol, s) for s in seeds], jobs)
    values = {b: [] for b in BASELINES if b in protocol.baselines}
    rewards = {b: [] for b in values}
    flagged = {b: [] for b in values}
    scenarios = []
    for vals, rew, flags, labels in outs:
        for b in values:
            values[b].append(vals[b])
            rewards[b].append(rew[b])
            flagged[b].extend(flags[b])
        scenarios.append(labels)
    return ValueReport(values, seeds, rewards, flagged, scenarios)
