"""Synthetic doubly-inhomogeneous panels and the online regime-switching environment.

All dynamics are linear in the features ``[1, s, a, a*s]`` with diagonal
Gaussian noise, and actions are coded ``-1 / +1``.  A change located at
``c`` means transitions with source time ``t >= c`` follow the new dynamics,
so the stationary tail ``[c, T]`` holds ``T - c`` transitions.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .model import FeatureMap
from .panel import Panel

_FM = FeatureMap()


def smooth_weight(x: float | np.ndarray) -> float | np.ndarray:
    """``psi(x) / (psi(x) + psi(1 - x))`` with ``psi(x) = exp(-1/x) 1{x > 0}``."""
    x = np.asarray(x, dtype=float)
    with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
        a = np.where(x > 0, np.exp(-1.0 / np.where(x > 0, x, 1.0)), 0.0)
        y = 1.0 - x
        b = np.where(y > 0, np.exp(-1.0 / np.where(y > 0, y, 1.0)), 0.0)
        out = a / (a + b)
    out = np.where(x <= 0, 0.0, np.where(x >= 1, 1.0, out))
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class Dynamics:
    """Next-state mean ``coef @ [1, s, a, a*s]`` plus ``noise * N(0, I)``."""

    coef: np.ndarray
    noise: np.ndarray

    def __post_init__(self):
        coef = np.atleast_2d(np.asarray(self.coef, dtype=float))
        d = coef.shape[0]
        if coef.shape[1] != 2 * d + 2:
            raise ValueError(f"coef must be (d, 2d+2), got {coef.shape}")
        noise = np.broadcast_to(np.asarray(self.noise, dtype=float), (d,)).copy()
        object.__setattr__(self, "coef", coef)
        object.__setattr__(self, "noise", noise)

    @property
    def state_dim(self) -> int:
        return self.coef.shape[0]

    @classmethod
    def scalar(cls, interaction: float, noise: float = 0.25, intercept: float = 0.0,
               state: float = 0.0, action: float = 0.0) -> "Dynamics":
        return cls(np.array([[intercept, state, action, interaction]]), np.array([noise]))

    def same_as(self, other: "Dynamics") -> bool:
        return np.array_equal(self.coef, other.coef) and np.array_equal(self.noise, other.noise)

    def mean(self, states: np.ndarray, actions: np.ndarray) -> np.ndarray:
        return _FM(states, actions) @ self.coef.T

    def to_dict(self) -> dict:
        return {"coef": self.coef.tolist(), "noise": self.noise.tolist()}


@dataclass(frozen=True)
class SmoothTransform:
    t0: float
    t1: float

    def __post_init__(self):
        if not self.t0 < self.t1:
            raise ValueError("smooth transform needs t0 < t1")

    def weight(self, t) -> float | np.ndarray:
        return smooth_weight((np.asarray(t, dtype=float) - self.t0) / (self.t1 - self.t0))


@dataclass(frozen=True)
class Segment:
    """Dynamics used from ``start`` (inclusive) to ``end`` (exclusive) in source time.

    ``smooth`` is the blend width as a fraction of ``T``; the change into this
    segment then happens over ``[start - smooth*T, start]``.
    """

    start: int
    end: int
    dynamics: Dynamics
    smooth: float | None = None


@dataclass(frozen=True)
class ClusterSpec:
    size: int
    segments: tuple[Segment, ...]


@dataclass(frozen=True)
class Reward:
    """``R = s*S + s2*S^2 + sa*S*A + s2a*S^2*A + a*A`` on the first state coordinate."""

    s: float = 0.0
    s2: float = 0.0
    sa: float = 0.0
    s2a: float = 0.0
    a: float = 0.0

    def __call__(self, states: np.ndarray, actions: np.ndarray) -> np.ndarray:
        x = np.asarray(states, dtype=float)
        x = x[..., 0] if x.ndim > np.ndim(actions) else x
        a = np.asarray(actions, dtype=float)
        return self.s * x + self.s2 * x**2 + self.sa * x * a + self.s2a * x**2 * a + self.a * a


DEFAULT_REWARD = Reward(s=4.0, s2a=0.25)


@dataclass(frozen=True)
class ScenarioSpec:
    clusters: tuple[ClusterSpec, ...]
    horizon: int
    reward: Reward = DEFAULT_REWARD
    behavior_p: float = 0.5
    initial_mean: tuple[float, ...] = (0.0,)
    initial_var: tuple[float, ...] = (0.5,)
    seed: int = 0

    def __post_init__(self):
        T = self.horizon
        if T < 1:
            raise ValueError("horizon must be >= 1")
        if not self.clusters:
            raise ValueError("at least one cluster required")
        d = None
        for k, c in enumerate(self.clusters):
            if c.size < 1:
                raise ValueError(f"cluster {k} size must be >= 1")
            segs = c.segments
            if not segs or segs[0].start != 0 or segs[-1].end != T:
                raise ValueError(f"cluster {k}: segments must tile [0, {T}]")
            for s1, s2 in zip(segs, segs[1:]):
                if s1.end != s2.start:
                    raise ValueError(f"cluster {k}: gap or overlap at t={s1.end}")
            for s in segs:
                if s.start >= s.end:
                    raise ValueError(f"cluster {k}: empty segment [{s.start}, {s.end})")
                d = s.dynamics.state_dim if d is None else d
                if s.dynamics.state_dim != d:
                    raise ValueError("all dynamics must share the state dimension")
        if len(self.initial_mean) != d or len(self.initial_var) != d:
            raise ValueError("initial distribution must match state dimension")
        if not 0.0 <= self.behavior_p <= 1.0:
            raise ValueError("behavior_p must be a probability")

    @property
    def state_dim(self) -> int:
        return self.clusters[0].segments[0].dynamics.state_dim

    @property
    def n_subjects(self) -> int:
        return sum(c.size for c in self.clusters)


@dataclass(frozen=True)
class GroundTruth:
    tau_star: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        tau = np.asarray(self.tau_star, dtype=np.int64)
        labels = np.asarray(self.labels, dtype=np.int64)
        if tau.shape != labels.shape:
            raise ValueError("tau_star and labels must have equal length")
        if np.any(tau < 1):
            raise ValueError("tau_star must be >= 1")
        object.__setattr__(self, "tau_star", tau)
        object.__setattr__(self, "labels", labels)

    def to_dict(self) -> dict:
        return {"tau_star": self.tau_star.tolist(), "labels": self.labels.tolist()}

    @classmethod
    def from_dict(cls, obj: dict) -> "GroundTruth":
        return cls(np.asarray(obj["tau_star"]), np.asarray(obj["labels"]))


def _segment_schedule(cluster: ClusterSpec, T: int):
    """Per source time: (old dynamics index, new dynamics index, blend weight)."""
    segs = cluster.segments
    old = np.zeros(T, dtype=np.int64)
    new = np.zeros(T, dtype=np.int64)
    w = np.ones(T)
    for j, s in enumerate(segs):
        old[s.start:s.end] = j
        new[s.start:s.end] = j
    for j in range(1, len(segs)):
        s = segs[j]
        if s.smooth:
            width = s.smooth * T
            tf = SmoothTransform(s.start - width, s.start)
            lo = max(segs[j - 1].start, int(math.floor(s.start - width)))
            for t in range(lo, s.start):
                if old[t] == j - 1:
                    new[t] = j
                    w[t] = tf.weight(t)
    return old, new, w


def _truth(spec: ScenarioSpec) -> GroundTruth:
    T = spec.horizon
    finals = [c.segments[-1].dynamics for c in spec.clusters]
    own_tau = []
    for c in spec.clusters:
        segs = c.segments
        j = len(segs) - 1
        while j > 0 and segs[j - 1].dynamics.same_as(segs[j].dynamics) and not segs[j].smooth:
            j -= 1
        own_tau.append(T - segs[j].start)
    group = []
    for k, dyn in enumerate(finals):
        g = next(m for m in range(k + 1) if finals[m].same_as(dyn))
        group.append(g)
    relabel = {g: n for n, g in enumerate(dict.fromkeys(group))}
    labels, taus = [], []
    for k, c in enumerate(spec.clusters):
        g = group[k]
        tau_k = min(own_tau[m] for m in range(len(finals)) if group[m] == g)
        labels += [relabel[g]] * c.size
        taus += [tau_k] * c.size
    return GroundTruth(np.array(taus), np.array(labels))


def generate_offline(spec: ScenarioSpec, horizon: int | None = None, seed: int | None = None,
                     actions: np.ndarray | None = None) -> tuple[Panel, GroundTruth]:
    """Simulate every subject forward under its cluster's piecewise dynamics.

    Random numbers are drawn in a fixed order (initial states, actions,
    noise, blend uniforms) so specs differing only in dynamics share them.
    Smooth changes mix the old and new transition densities with weight
    ``smooth_weight((t - t0) / (t1 - t0))``.
    """
    if horizon is not None and horizon != spec.horizon:
        raise ValueError("horizon must match the scenario")
    T = spec.horizon
    N, d = spec.n_subjects, spec.state_dim
    rng = np.random.default_rng(spec.seed if seed is None else seed)
    s0 = rng.normal(spec.initial_mean, np.sqrt(spec.initial_var), size=(N, d))
    if actions is None:
        acts = np.where(rng.random((N, T + 1)) < spec.behavior_p, 1, -1)
    else:
        acts = np.broadcast_to(np.asarray(actions, dtype=np.int64), (N, T + 1)).copy()
        rng.random((N, T + 1))
    eps = rng.standard_normal((N, T, d))
    mix_u = rng.random((N, T))
    states = np.empty((N, T + 1, d))
    states[:, 0] = s0
    row = 0
    for c in spec.clusters:
        sl = slice(row, row + c.size)
        old, new, w = _segment_schedule(c, T)
        dyns = [s.dynamics for s in c.segments]
        for t in range(T):
            use_new = mix_u[sl, t] < w[t]
            s, a = states[sl, t], acts[sl, t]
            m_old = dyns[old[t]].mean(s, a) + dyns[old[t]].noise * eps[sl, t]
            if new[t] != old[t]:
                m_new = dyns[new[t]].mean(s, a) + dyns[new[t]].noise * eps[sl, t]
                states[sl, t + 1] = np.where(use_new[:, None], m_new, m_old)
            else:
                states[sl, t + 1] = m_old
        row += c.size
    rewards = spec.reward(states, acts)
    return Panel(states, acts, rewards), _truth(spec)


# ---------------------------------------------------------------------------
# presets


def two_cluster_spec(T: int = 50, sizes: Sequence[int] = (25, 25), changes: Sequence[int] = (35, 15),
                     coef: float = 0.5, noise: float = 0.25, smooth: bool = False,
                     seed: int = 0) -> ScenarioSpec:
    """Two clusters whose ``S*A`` coefficient flips sign at cluster-specific times."""
    neg, pos = Dynamics.scalar(-coef, noise), Dynamics.scalar(coef, noise)
    width = 0.1 if smooth else None
    c1 = ClusterSpec(sizes[0], (Segment(0, changes[0], neg), Segment(changes[0], T, pos, width)))
    c2 = ClusterSpec(sizes[1], (Segment(0, changes[1], pos), Segment(changes[1], T, neg, width)))
    return ScenarioSpec((c1, c2), T, DEFAULT_REWARD, 0.5, (0.0,), (0.5,), seed)


def stationary_spec(N: int = 25, T: int = 50, coef: float = 0.5, noise: float = 0.25,
                    seed: int = 0) -> ScenarioSpec:
    dyn = Dynamics.scalar(coef, noise)
    return ScenarioSpec((ClusterSpec(N, (Segment(0, T, dyn),)),), T, DEFAULT_REWARD, 0.5,
                        (0.0,), (0.5,), seed)


SEMI_SYNTHETIC_BASE = np.array([
    [10.0, 0.4, -0.04, 0.1],
    [11.0, -0.4, 0.05, 0.4],
    [1.2, -0.02, 0.03, 0.8],
])
_C1_F = np.array([[0.6, 0.3, 0, 0], [-0.4, 0, 0, 0], [-0.5, 0, 0, 0]])
_C2_G1 = np.array([[-1, 0, 0, 0], [-0.5, 0, 0, 0], [-0.2, 0, 0, 0]])
_C2_F1 = np.array([[0.5, 0.3, 0, 0], [-0.3, 0, 0, 0], [-0.4, 0, 0, 0]])
_C2_G2 = np.array([[1, 0.15, -0.01, 0.02], [1, -0.15, 0.01, 0.1], [0.3, -0.01, 0.01, -0.15]])
_C2_F2 = np.array([[0.7, 0.2, 0, 0], [-0.5, 0, 0, 0], [-0.6, 0, 0, 0]])
_C3_G = np.array([[1.5, 0.05, 0, 0], [0.5, -0.2, 0, 0], [0.2, 0, 0, 0]])
_C3_F = np.array([[0.55, 0.25, 0, 0], [-0.4, 0, 0, 0], [-0.5, 0, 0, 0]])
SEMI_SYNTHETIC_NOISE = np.sqrt([1.0, 1.0, 0.2])


def augmented_dynamics(base: np.ndarray, G: np.ndarray, F: np.ndarray, scale: float,
                       noise: np.ndarray = SEMI_SYNTHETIC_NOISE) -> Dynamics:
    """``S' = [base + scale (G + A F)] [1; S] + noise``, rewritten on ``[1, s, a, a*s]``."""
    lin = base + scale * G
    act = scale * F
    coef = np.hstack([lin[:, :1], lin[:, 1:], act[:, :1], act[:, 1:]])
    return Dynamics(coef, noise)


def semi_synthetic_spec(delta: float = 0.8, n_per_cluster: int = 50, seed: int = 0) -> ScenarioSpec:
    """Three clusters, ``T=26``, ``d=3``: one change (cluster 1), two (cluster 2), none (cluster 3)."""
    if delta not in (0.8, 0.5, 0.2):
        warnings.warn(f"delta={delta} outside the reference set {{0.8, 0.5, 0.2}}", stacklevel=2)
    T = 26
    B = SEMI_SYNTHETIC_BASE
    zero = np.zeros_like(B)
    c1 = ClusterSpec(n_per_cluster, (
        Segment(0, 11, augmented_dynamics(B, zero, _C1_F, delta)),
        Segment(11, T, augmented_dynamics(B, zero, _C1_F, -delta)),
    ))
    c2 = ClusterSpec(n_per_cluster, (
        Segment(0, 9, augmented_dynamics(B, _C2_G1, _C2_F1, delta)),
        Segment(9, 17, augmented_dynamics(B, _C2_G2, _C2_F2, -delta)),
        Segment(17, T, augmented_dynamics(B, _C2_G2, _C2_F2, delta)),
    ))
    c3 = ClusterSpec(n_per_cluster, (Segment(0, T, augmented_dynamics(B, _C3_G, _C3_F, delta)),))
    return ScenarioSpec((c1, c2, c3), T, Reward(s=1.0), 0.25, (20.0, 20.0, 7.0), (3.0, 2.0, 1.0), seed)


def semi_synthetic_preset(delta: float = 0.8, seed: int = 0) -> tuple[Panel, GroundTruth]:
    return generate_offline(semi_synthetic_spec(delta, seed=seed))


BUILDING_BLOCKS = (
    "constancy", "merge", "split", "switch", "promotion", "evolution",
    "evolution_constancy", "merge_evolution",
)


def building_block_spec(name: str, T: int = 50, change: int = 25, size: int = 1,
                        coefs: tuple[float, float, float] = (-0.5, 0.5, 0.0),
                        noise: float = 0.25, seed: int = 0) -> ScenarioSpec:
    """Two subjects (or two groups of ``size``) and one change at ``change``.

    Dynamics ``D1, D2, D3`` differ in the ``S*A`` coefficient; each block lists
    (before, after) for the two rows.
    """
    D = [Dynamics.scalar(c, noise) for c in coefs]
    table = {
        "constancy": ((0, 0), (1, 1)),
        "merge": ((0, 1), (1, 1)),
        "split": ((0, 0), (0, 1)),
        "switch": ((0, 1), (1, 0)),
        "promotion": ((0, 1), (1, 2)),
        "evolution": ((0, 2), (0, 2)),
        "evolution_constancy": ((0, 2), (1, 1)),
        "merge_evolution": ((0, 2), (1, 2)),
    }
    if name not in table:
        raise KeyError(f"unknown building block {name!r}; choose from {BUILDING_BLOCKS}")
    clusters = []
    for before, after in table[name]:
        if before == after:
            segs = (Segment(0, T, D[before]),)
        else:
            segs = (Segment(0, change, D[before]), Segment(change, T, D[after]))
        clusters.append(ClusterSpec(size, segs))
    return ScenarioSpec(tuple(clusters), T, DEFAULT_REWARD, 0.5, (0.0,), (0.5,), seed)


PRESETS = ("s5_1_offline_abrupt", "s5_1_offline_smooth", "appendix_c")


def preset_spec(name: str, seed: int = 0, delta: float = 0.8) -> ScenarioSpec:
    if name == "s5_1_offline_abrupt":
        return two_cluster_spec(seed=seed)
    if name == "s5_1_offline_smooth":
        return two_cluster_spec(smooth=True, seed=seed)
    if name == "appendix_c":
        return semi_synthetic_spec(delta, seed=seed)
    if name.startswith("building:"):
        return building_block_spec(name.split(":", 1)[1], seed=seed)
    raise KeyError(f"unknown preset {name!r}")


def generate_preset(name: str, seed: int = 0, delta: float = 0.8) -> tuple[Panel, GroundTruth]:
    return generate_offline(preset_spec(name, seed=seed, delta=delta))


def spec_from_dict(obj: dict) -> ScenarioSpec:
    """Build a scenario from its JSON form (see ``spec_to_dict``)."""
    clusters = []
    for c in obj["clusters"]:
        segs = tuple(
            Segment(int(s["start"]), int(s["end"]),
                    Dynamics(np.asarray(s["dynamics"]["coef"], float),
                             np.asarray(s["dynamics"]["noise"], float)),
                    s.get("smooth"))
            for s in c["segments"]
        )
        clusters.append(ClusterSpec(int(c["size"]), segs))
    return ScenarioSpec(
        tuple(clusters), int(obj["horizon"]), Reward(**obj.get("reward", {"s": 4.0, "s2a": 0.25})),
        float(obj.get("behavior_p", 0.5)), tuple(obj.get("initial_mean", (0.0,))),
        tuple(obj.get("initial_var", (0.5,))), int(obj.get("seed", 0)),
    )


def spec_to_dict(spec: ScenarioSpec) -> dict:
    r = spec.reward
    return {
        "horizon": spec.horizon,
        "clusters": [
            {"size": c.size, "segments": [
                {"start": s.start, "end": s.end, "dynamics": s.dynamics.to_dict(), "smooth": s.smooth}
                for s in c.segments]}
            for c in spec.clusters
        ],
        "reward": {"s": r.s, "s2": r.s2, "sa": r.sa, "s2a": r.s2a, "a": r.a},
        "behavior_p": spec.behavior_p,
        "initial_mean": list(spec.initial_mean),
        "initial_var": list(spec.initial_var),
        "seed": spec.seed,
    }


def load_spec(path) -> ScenarioSpec:
    with open(path) as fh:
        return spec_from_dict(json.load(fh))


# ---------------------------------------------------------------------------
# online environment


@dataclass
class OnlineEnvironment:
    """Clusters switching between two scalar regimes at Poisson-arriving times.

    ``regimes[k]`` indexes ``dynamics``; at each arrival every cluster flips
    to the other regime with probability ``flip_prob``.
    """

    dynamics: tuple[Dynamics, Dynamics] = field(
        default_factory=lambda: (Dynamics.scalar(-0.5, 0.25), Dynamics.scalar(0.5, 0.25)))
    reward: Reward = DEFAULT_REWARD
    rate: float = 1 / 40
    flip_prob: float = 0.5

    def step(self, states: np.ndarray, actions: np.ndarray, regimes: np.ndarray,
             noise: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Next states and rewards for a batch; ``regimes`` is per subject."""
        states = np.asarray(states, dtype=float).reshape(len(actions), -1)
        out = np.empty_like(states)
        for r, dyn in enumerate(self.dynamics):
            m = np.asarray(regimes) == r
            if m.any():
                out[m] = dyn.mean(states[m], actions[m]) + dyn.noise * noise[m]
        return out, self.reward(states, actions)

    def arrivals(self, start: int, end: int, rng: np.random.Generator) -> list[int]:
        """Change times in ``(start, end)`` from a Poisson process (rounded up)."""
        times, t = [], float(start)
        while True:
            t += rng.exponential(1.0 / self.rate)
            c = int(math.ceil(t))
            if c >= end:
                return times
            if not times or c != times[-1]:
                times.append(c)

    def advance_regimes(self, regimes: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        flips = rng.random(len(regimes)) < self.flip_prob
        return np.where(flips, 1 - np.asarray(regimes), regimes)


def scenario_label(before: Sequence[int], after: Sequence[int]) -> str:
    """Name the two-cluster configuration produced at one arrival."""
    b1, b2 = before
    a1, a2 = after
    changed = (b1 != a1, b2 != a2)
    if not any(changed):
        return "constancy"
    if all(changed):
        return "switch" if b1 != b2 else "evolution"
    return "merge" if a1 == a2 else "split"
