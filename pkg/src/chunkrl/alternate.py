"""Alternating clustering / most-recent change point detection with IC selection."""

from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import IO, Sequence

import numpy as np

from .cluster import Clustering, WindowData, assign, check_taus, cluster_objective, fit_clusters
from .cpdetect import ChangePointEstimate, DetectorConfig, scan_most_recent
from .model import FeatureMap
from .panel import Panel


@dataclass(frozen=True)
class InitialSpec:
    tau0: np.ndarray | int
    label: str = "initial"

    def resolve(self, panel: Panel) -> np.ndarray:
        tau = np.broadcast_to(np.asarray(self.tau0, dtype=np.int64), (panel.n_subjects,)).copy()
        if np.any(tau < 1) or np.any(tau > panel.horizon):
            raise ValueError(f"initial {self.label!r}: tau0 must lie in [1, T]")
        return tau


def oracle_initial(tau_star) -> InitialSpec:
    return InitialSpec(np.asarray(tau_star, dtype=np.int64), "oracle")


def random_initial(horizon: int, rng: np.random.Generator) -> InitialSpec:
    """One location drawn uniformly from ``[0, T)`` shared by all subjects."""
    return InitialSpec(horizon - int(rng.integers(0, horizon)), "random")


def zero_initial(horizon: int) -> InitialSpec:
    return InitialSpec(horizon, "zero")


@dataclass
class SegmentationResult:
    clustering: Clustering
    tau_hats: np.ndarray
    ic: float
    k: int
    initial_label: str = "initial"
    iterations: int = 0
    converged: bool = False
    estimates: list[ChangePointEstimate] = field(default_factory=list)
    report: list[dict] = field(default_factory=list)

    @property
    def assignment(self) -> np.ndarray:
        return self.clustering.assignment

    def to_dict(self) -> dict:
        return {
            "k": self.k,
            "ic": self.ic,
            "initial_label": self.initial_label,
            "iterations": self.iterations,
            "converged": self.converged,
            "tau_hats": self.tau_hats.tolist(),
            "clustering": self.clustering.to_dict(),
            "report": self.report,
        }


def canonical_labels(assignment) -> np.ndarray:
    """Relabel clusters in order of first appearance."""
    a = np.asarray(assignment)
    order = {}
    for v in a.tolist():
        order.setdefault(v, len(order))
    return np.array([order[v] for v in a.tolist()], dtype=np.int64)


def _final_clustering(panel: Panel, assignment: np.ndarray, tau: np.ndarray, k: int,
                      fm: FeatureMap, restarts: int) -> Clustering:
    data = WindowData(panel, tau, fm)
    params = [data.fit(np.flatnonzero(assignment == j)) for j in range(k)]
    obj = float(sum(data.scores(W, s)[assignment == j].sum() for j, (W, s) in enumerate(params)))
    return Clustering(k, assignment, [data.model(W, s) for W, s in params], obj, restarts)


def alternate_once(panel: Panel, initial: InitialSpec, k: int, detector: DetectorConfig | None = None,
                   restarts: int = 20, seed: int = 0, feature_map: FeatureMap | None = None,
                   max_iter: int = 10, sample_split: bool = False) -> SegmentationResult:
    """Alternate clustering on the current windows and per-cluster scans.

    Stops as soon as the memberships or the change points repeat between two
    consecutive iterations, or after ``max_iter`` iterations.  With ``k=1``
    clustering is skipped.  ``sample_split`` fits the cluster models on one
    random half of the subjects and runs the scans on the other half.
    """
    cfg = detector or DetectorConfig()
    fm = feature_map or FeatureMap()
    N = panel.n_subjects
    if not 1 <= k <= N:
        raise ValueError(f"k must lie in [1, {N}]")
    tau = initial.resolve(panel)
    split_a = split_b = None
    if sample_split:
        perm = np.random.default_rng(seed).permutation(N)
        split_a, split_b = np.sort(perm[: (N + 1) // 2]), np.sort(perm[(N + 1) // 2:])
        if k > len(split_a):
            raise ValueError("k exceeds the clustering half of the sample split")
    prev_assign = None
    assignment = np.zeros(N, dtype=np.int64)
    estimates: list[ChangePointEstimate] = []
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        if k > 1:
            if sample_split:
                sub = panel.subset(split_a)
                warm = None if prev_assign is None else prev_assign[split_a]
                cl = fit_clusters(sub, tau[split_a], k, restarts, seed, fm, warm)
                assignment = assign(panel, tau, cl.models)
            else:
                cl = fit_clusters(panel, tau, k, restarts, seed, fm, prev_assign)
                assignment = cl.assignment
            assignment = canonical_labels(assignment)
            k_eff = int(assignment.max()) + 1
        else:
            k_eff = 1
        new_tau = np.empty(N, dtype=np.int64)
        estimates = []
        for j in range(k_eff):
            members = np.flatnonzero(assignment == j)
            scan_set = members
            if split_b is not None:
                inter = np.intersect1d(members, split_b)
                scan_set = inter if len(inter) else members
            est = scan_most_recent(panel, scan_set, cfg, fm)
            estimates.append(est)
            new_tau[members] = est.tau_hat
        same_members = prev_assign is not None and np.array_equal(prev_assign, assignment)
        same_tau = np.array_equal(new_tau, tau)
        tau = new_tau
        prev_assign = assignment
        if same_members or same_tau:
            converged = True
            break
    k_eff = int(assignment.max()) + 1
    cl = _final_clustering(panel, assignment, tau, k_eff, fm, restarts)
    ic = cl.objective - k_eff * math.log(N)
    return SegmentationResult(cl, tau, ic, k_eff, initial.label, it, converged, estimates)


def information_criterion(panel: Panel, result: SegmentationResult) -> float:
    """Weighted window log-likelihood of the segmentation minus ``k log N``."""
    c = result.clustering
    obj = cluster_objective(panel, c.assignment, c.models, check_taus(panel, result.tau_hats))
    return obj - result.k * math.log(panel.n_subjects)


def _run_cell(args):
    panel, initial, k, kwargs = args
    try:
        return alternate_once(panel, initial, k, **kwargs), None
    except Exception as exc:  # recorded in the report
        return None, f"{type(exc).__name__}: {exc}"


def select(panel: Panel, initials: Sequence[InitialSpec], k_range: Sequence[int],
           detector: DetectorConfig | None = None, restarts: int = 20, seed: int = 0,
           feature_map: FeatureMap | None = None, max_iter: int = 10,
           sample_split: bool = False, jobs: int = 1) -> SegmentationResult:
    """Run every (initial, k) pair and keep the largest IC.

    Ties go to the smaller ``k``, then to the earlier initial.  The returned
    result carries one report row per candidate.
    """
    initials = list(initials)
    ks = sorted(set(int(k) for k in k_range))
    if not initials or not ks:
        raise ValueError("need at least one initial and one k")
    kwargs = dict(detector=detector, restarts=restarts, seed=seed, feature_map=feature_map,
                  max_iter=max_iter, sample_split=sample_split)
    cells = [(panel, ini, k, kwargs) for k in ks for ini in initials]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            outs = list(ex.map(_run_cell, cells))
    else:
        outs = [_run_cell(c) for c in cells]
    report, best, errors = [], None, []
    for (_, ini, k, _), (res, err) in zip(cells, outs):
        if res is None:
            errors.append(f"{ini.label}/k={k}: {err}")
            report.append({"initial_label": ini.label, "k": k, "ic": float("nan"),
                           "iterations": 0, "converged": False, "error": err})
            continue
        report.append({"initial_label": ini.label, "k": k, "ic": res.ic,
                       "iterations": res.iterations, "converged": res.converged, "error": ""})
        if best is None or res.ic > best.ic:
            best = res
    if best is None:
        raise RuntimeError("all candidates failed: " + "; ".join(errors))
    best.report = report
    return best


def write_report(result: SegmentationResult, sink: IO[str], format: str = "csv") -> None:
    cols = ["initial_label", "k", "ic", "iterations", "converged", "error"]
    if format == "json":
        json.dump(result.report, sink, indent=2)
        sink.write("\n")
        return
    w = csv.writer(sink, lineterminator="\n")
    w.writerow(cols)
    for row in result.report:
        w.writerow([row["initial_label"], row["k"], repr(float(row["ic"])), row["iterations"],
                    int(row["converged"]), row.get("error", "")])
