"""Command-line interface: simulate, fit, evaluate, online, reproduce.

Exit codes: 0 success, 1 runtime failure, 2 usage or validation error.
The default output directory comes from ``$CHUNKRL_OUTPUT_DIR`` (else
``results``).
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .alternate import InitialSpec, select, write_report
from .cpdetect import DetectorConfig, write_trace_csv
from .envgen import GroundTruth, PRESETS, generate_offline, load_spec, preset_spec
from .harness import (FIG3_ARMS, K_SELECTION_ARMS, OFFLINE_COLUMNS, SEMI_SYNTHETIC_ARMS, OfflineConfig,
                      OnlineProtocol, run_offline_experiment, run_online_experiment, summarize_offline,
                      write_rows)
from .metrics import adjusted_rand_index, cp_error
from .panel import PanelError, load_panel, save_panel

OUTPUT_ENV = "CHUNKRL_OUTPUT_DIR"
FIGURES = ("fig3", "fig3-k", "fig4", "fig4-shared", "fig5")


class UsageError(Exception):
    """Invalid input detected after argument parsing (exit code 2)."""


def _out_dir(path: str | None) -> Path:
    out = Path(path or os.environ.get(OUTPUT_ENV, "results"))
    out.mkdir(parents=True, exist_ok=True)
    return out


def _k_range(text: str) -> list[int]:
    try:
        if ".." in text:
            lo, hi = text.split("..")
            ks = list(range(int(lo), int(hi) + 1))
        else:
            ks = [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid k range {text!r}; use '1..4' or '1,2,3'")
    if not ks or min(ks) < 1:
        raise argparse.ArgumentTypeError("k values must be positive")
    return ks


def _positive_int(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}")
    if v < 1:
        raise argparse.ArgumentTypeError("expected a positive integer")
    return v


def _dump_json(obj, path: Path) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _detector(args) -> DetectorConfig:
    return DetectorConfig(epsilon=args.epsilon, tau_start=args.tau_start, tau_step=args.tau_step,
                          mc_reps=args.mc_reps, alpha=args.alpha, seed=args.seed)


# ---------------------------------------------------------------------------
# commands


def cmd_simulate(args) -> int:
    if args.spec:
        spec = load_spec(args.spec)
        spec_seed = args.seed
    else:
        try:
            spec = preset_spec(args.preset, seed=args.seed, delta=args.delta)
        except KeyError as exc:
            raise UsageError(str(exc))
        spec_seed = None
    panel, truth = generate_offline(spec, seed=spec_seed)
    out = _out_dir(args.out)
    ext = "csv" if args.format == "csv" else "jsonl"
    with open(out / f"panel.{ext}", "w") as fh:
        save_panel(panel, fh, args.format)
    _dump_json(truth.to_dict(), out / "truth.json")
    print(f"wrote {out / f'panel.{ext}'} (N={panel.n_subjects}, T={panel.horizon}, d={panel.state_dim})")
    return 0


def _read_panel(args):
    try:
        with open(args.panel, "rb") as fh:
            return load_panel(fh, args.format, args.action_space)
    except FileNotFoundError as exc:
        raise UsageError(str(exc))


def cmd_fit(args) -> int:
    panel = _read_panel(args)
    initials = [InitialSpec(min(t, panel.horizon), f"tau{t}") for t in args.tau0]
    if args.truth:
        truth = GroundTruth.from_dict(json.loads(Path(args.truth).read_text()))
        if len(truth.tau_star) != panel.n_subjects:
            raise UsageError("truth length does not match the panel")
        initials.insert(0, InitialSpec(truth.tau_star, "oracle"))
    if max(args.k) > panel.n_subjects:
        raise UsageError(f"k up to {max(args.k)} exceeds N={panel.n_subjects}")
    res = select(panel, initials, args.k, _detector(args), args.restarts, args.seed,
                 max_iter=args.max_iter, sample_split=args.sample_split, jobs=args.jobs)
    out = _out_dir(args.out)
    _dump_json(res.to_dict(), out / "segmentation.json")
    with open(out / "candidates.csv", "w") as fh:
        write_report(res, fh)
    for j, est in enumerate(res.estimates):
        with open(out / f"scan_trace_cluster{j}.csv", "w") as fh:
            write_trace_csv(est, fh)
    print(f"selected k={res.k} initial={res.initial_label} ic={res.ic:.6f}")
    return 0


def cmd_evaluate(args) -> int:
    seg = json.loads(Path(args.segmentation).read_text())
    truth = GroundTruth.from_dict(json.loads(Path(args.truth).read_text()))
    tau = np.asarray(seg["tau_hats"])
    labels = np.asarray(seg["clustering"]["assignment"])
    if len(tau) != len(truth.tau_star) or len(labels) != len(truth.labels):
        raise UsageError("segmentation and truth have different numbers of subjects")
    metrics = {"cp_error": cp_error(tau, truth), "ari": adjusted_rand_index(labels, truth.labels),
               "k": int(seg["k"])}
    out = _out_dir(args.out)
    _dump_json(metrics, out / "metrics.json")
    print(json.dumps(metrics, sort_keys=True))
    return 0


def _protocol(args, **overrides) -> OnlineProtocol:
    kw = dict(batch_len=args.batch_len, start=args.start, end=args.end, change_rate=args.rate,
              epsilon=args.explore, detector=_detector(args))
    kw.update(overrides)
    return OnlineProtocol(**kw)


def _write_values(report, path: Path) -> None:
    with open(path, "w") as fh:
        write_rows(report.rows(), fh, ["replication", "seed", "baseline", "value"])


def cmd_online(args) -> int:
    try:
        protocol = _protocol(args, coefs=tuple(args.coefs))
    except ValueError as exc:
        raise UsageError(str(exc))
    seeds = [args.seed + r for r in range(args.reps)]
    report = run_online_experiment(protocol, seeds, jobs=args.jobs)
    out = _out_dir(args.out)
    _write_values(report, out / "values.csv")
    for b, m in report.medians().items():
        print(f"{b:12s} median value {m:.4f}")
    return 0


def cmd_reproduce(args) -> int:
    out = _out_dir(args.out)
    seeds = [args.seed + r for r in range(args.reps)]
    fig = args.figure
    if fig in ("fig3", "fig3-k", "fig5"):
        if fig == "fig3":
            cfg = OfflineConfig("s5_1_offline_abrupt", FIG3_ARMS, _detector(args), args.restarts)
        elif fig == "fig3-k":
            cfg = OfflineConfig("s5_1_offline_abrupt", K_SELECTION_ARMS, _detector(args), args.restarts)
        else:
            cfg = None
        if fig == "fig5":
            rows = []
            for delta in args.deltas:
                c = OfflineConfig("appendix_c", SEMI_SYNTHETIC_ARMS, _detector(args), args.restarts, delta=delta)
                for r in run_offline_experiment(c, seeds=seeds, jobs=args.jobs):
                    r["arm"] = f"delta={delta}"
                    rows.append(r)
        else:
            rows = run_offline_experiment(cfg, seeds=seeds, jobs=args.jobs)
        with open(out / "segmentation_metrics.csv", "w") as fh:
            write_rows(rows, fh, OFFLINE_COLUMNS)
        summary = summarize_offline(rows)
        with open(out / f"{fig}_summary.csv", "w") as fh:
            write_rows(summary, fh)
        for s in summary:
            print(f"{s['arm']:18s} cp_error median {s['cp_error_median']:.4f}  ari median {s['ari_median']:.4f}"
                  f"  failed {s['n_failed']}")
        return 0
    coefs = (0.1, 0.9) if fig == "fig4-shared" else (-0.5, 0.5)
    report = run_online_experiment(_protocol(args, coefs=coefs), seeds, jobs=args.jobs)
    _write_values(report, out / "values.csv")
    with open(out / f"{fig}_summary.csv", "w") as fh:
        rows = []
        for b, v in report.values.items():
            q1, med, q3 = np.percentile(v, [25, 50, 75])
            rows.append({"baseline": b, "median": float(med), "q1": float(q1), "q3": float(q3),
                         "mean": float(np.mean(v))})
        write_rows(rows, fh)
    for r in rows:
        print(f"{r['baseline']:12s} median value {r['median']:.4f}")
    return 0


# ---------------------------------------------------------------------------
# parser


def _add_common(p: argparse.ArgumentParser, detector: bool = False, online: bool = False) -> None:
    p.add_argument("--config", help="JSON file whose keys set defaults for this command's flags")
    p.add_argument("--seed", type=int, default=0, help="master random seed (default 0)")
    p.add_argument("--jobs", type=_positive_int, default=1, help="worker processes (results do not depend on it)")
    p.add_argument("--out", default=None, help=f"output directory (default ${OUTPUT_ENV} or ./results)")
    if detector:
        g = p.add_argument_group("change point test")
        g.add_argument("--epsilon", type=float, default=None, help="boundary fraction (default 1/T)")
        g.add_argument("--tau-start", type=int, default=None, help="first tested window length")
        g.add_argument("--tau-step", type=_positive_int, default=1, help="scan increment (default 1)")
        g.add_argument("--mc-reps", type=_positive_int, default=2000, help="Monte Carlo replicates (default 2000)")
        g.add_argument("--alpha", type=float, default=0.01, help="test level (default 0.01)")
        g.add_argument("--restarts", type=_positive_int, default=20, help="clustering restarts (default 20)")
    if online:
        g = p.add_argument_group("online protocol")
        g.add_argument("--batch-len", type=_positive_int, default=25, help="batch length L (default 25)")
        g.add_argument("--start", type=int, default=50, help="end of the offline data (default 50)")
        g.add_argument("--end", type=int, default=250, help="termination time (default 250)")
        g.add_argument("--rate", type=float, default=1 / 40, help="change arrival rate (default 1/40)")
        g.add_argument("--explore", type=float, default=0.05, help="epsilon-greedy rate (default 0.05)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="chunkrl", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate a panel and its ground truth")
    src = p.add_mutually_exclusive_group()
    src.add_argument("--preset", default="s5_1_offline_abrupt",
                     help=f"one of {', '.join(PRESETS)} or building:<block>")
    src.add_argument("--spec", help="scenario JSON file")
    p.add_argument("--delta", type=float, default=0.8, help="signal strength for appendix_c (default 0.8)")
    p.add_argument("--format", choices=("csv", "jsonl"), default="csv")
    _add_common(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("fit", help="segment a panel: clusters and most recent change points")
    p.add_argument("--panel", required=True, help="panel file")
    p.add_argument("--format", choices=("csv", "jsonl"), default="csv")
    p.add_argument("--action-space", default=None, help="labels to codes, e.g. '-1,1' or 'a=0,b=1'")
    p.add_argument("--k", type=_k_range, default=[1, 2, 3, 4], help="cluster counts, e.g. 1..4 (default)")
    p.add_argument("--tau0", type=_positive_int, nargs="+", default=[12], help="initial window lengths")
    p.add_argument("--truth", default=None, help="truth JSON; adds the oracle initial")
    p.add_argument("--max-iter", type=_positive_int, default=10, help="alternation cap (default 10)")
    p.add_argument("--sample-split", action="store_true", help="split subjects between the two steps")
    _add_common(p, detector=True)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("evaluate", help="CP error and ARI of a segmentation against truth")
    p.add_argument("--segmentation", required=True)
    p.add_argument("--truth", required=True)
    _add_common(p)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("online", help="run the batch online value comparison")
    p.add_argument("--reps", type=_positive_int, default=20)
    p.add_argument("--coefs", type=float, nargs=2, default=[-0.5, 0.5], help="the two S*A regimes")
    _add_common(p, detector=True, online=True)
    p.set_defaults(func=cmd_online)

    p = sub.add_parser("reproduce", help="plot-ready CSVs for one figure")
    p.add_argument("figure", choices=FIGURES)
    p.add_argument("--reps", type=_positive_int, default=20)
    p.add_argument("--deltas", type=float, nargs="+", default=[0.2, 0.5, 0.8])
    _add_common(p, detector=True, online=True)
    p.set_defaults(func=cmd_reproduce)
    return parser


def _apply_config(parser: argparse.ArgumentParser, argv: list[str], args) -> argparse.Namespace:
    """Re-parse with config-file values as defaults; unknown keys are a usage error."""
    try:
        cfg = json.loads(Path(args.config).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read config {args.config}: {exc}")
    if not isinstance(cfg, dict):
        raise UsageError("config must be a JSON object")
    allowed = set(vars(args)) - {"func", "command", "config"}
    cfg = {k.replace("-", "_"): v for k, v in cfg.items()}
    unknown = sorted(set(cfg) - allowed)
    if unknown:
        raise UsageError(f"unknown config keys for '{args.command}': {', '.join(unknown)}")
    subparser = parser._subparsers._group_actions[0].choices[args.command]
    for key, value in cfg.items():
        action = next(a for a in subparser._actions if a.dest == key)
        if action.type is not None and value is not None:
            try:
                value = [action.type(str(v)) for v in value] if isinstance(value, list) else action.type(str(value))
            except (argparse.ArgumentTypeError, ValueError) as exc:
                raise UsageError(f"config key {key}: {exc}")
        subparser.set_defaults(**{key: value})
    return parser.parse_args(argv)


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        if args.config:
            args = _apply_config(parser, argv, args)
        return args.func(args)
    except (UsageError, PanelError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # runtime failure
        print(f"failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
