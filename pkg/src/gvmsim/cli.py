"""Command-line entry points.

``gvmsim run config.yaml``   one simulation, CSV metrics on stdout.
``gvmsim suite suite.yaml``  a mode sweep over workloads, with per-run CSV
                             rows plus a weighted-speedup summary per
                             application-count bucket.
"""

import argparse
import csv
import dataclasses
import json
import sys

from .config import MODES, load_run_config, run_config_from_dict
from .engine import CSV_COLUMNS, metric_row, run, weighted_speedup
from .errors import SimError
from .paging import PAGING_MODES
from .workload import HOMOGENEOUS, WorkloadSpec

EXIT_BAD_CONFIG = 2
EXIT_RUN_FAILED = 1


def _apply_overrides(config, args):
    if args.seed is not None:
        config.seed = args.seed
    if args.mode is not None:
        config.mode = args.mode
    if args.paging is not None:
        config.paging = args.paging
    if getattr(args, "interval", None) is not None:
        config.interval_cycles = args.interval
    config.validate()
    return config


def _write_rows(rows, columns, out, as_json):
    if as_json:
        json.dump(rows, out, indent=2)
        out.write("\n")
        return
    w = csv.DictWriter(out, fieldnames=columns)
    w.writeheader()
    for row in rows:
        w.writerow(row)


def cmd_run(args) -> int:
    try:
        config = load_run_config(args.config)
        _apply_overrides(config, args)
    except (SimError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_BAD_CONFIG
    metrics = run(config)
    row = metric_row(metrics, workload=args.name)
    out = open(args.output, "w", newline="") if args.output else sys.stdout
    try:
        _write_rows([row], CSV_COLUMNS, out, args.json)
        if args.intervals and metrics.intervals:
            cols = list(metrics.intervals[0])
            _write_rows([{k: str(v) for k, v in iv.items()}
                         for iv in metrics.intervals], cols, out, args.json)
    finally:
        if args.output:
            out.close()
    return 0 if metrics.status == "ok" else EXIT_RUN_FAILED


SUMMARY_COLUMNS = ["workload", "apps", "mode", "seed", "weighted_speedup"]


def _alone_config(base_dict, profile, seed, cores_per_app):
    cfg = run_config_from_dict(base_dict)
    cfg.workload = WorkloadSpec(HOMOGENEOUS, 1, profile)
    cfg.cores = cores_per_app
    cfg.mode = "gpu_mmu"
    cfg.seed = seed
    return cfg.validate()


def cmd_suite(args) -> int:
    import yaml

    try:
        with open(args.suite) as fh:
            suite = yaml.safe_load(fh) or {}
        base = suite.get("base", {})
        modes = suite.get("modes", list(MODES))
        seeds = suite.get("seeds", [1])
        workloads = suite.get("workloads")
        if not workloads:
            raise SimError("suite file needs a non-empty workloads list")
        for m in modes:
            if m not in MODES:
                raise SimError(f"suite mode {m!r} unknown")
        jobs = []
        for entry in workloads:
            entry = dict(entry)
            name = entry.pop("name", None)
            cfg_dict = dict(base)
            cfg_dict.update(entry)
            probe = run_config_from_dict(cfg_dict)
            if name is None:
                name = f"{probe.workload.category}{probe.workload.num_apps}"
            jobs.append((name, cfg_dict))
    except (SimError, OSError, yaml.YAMLError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_BAD_CONFIG

    rows = []
    summary = []
    failed = 0
    for name, cfg_dict in jobs:
        for seed in seeds:
            alone = None
            for mode in modes:
                cfg = run_config_from_dict(cfg_dict)
                cfg.seed = seed
                cfg.mode = mode
                try:
                    metrics = run(cfg)
                except SimError as exc:
                    failed += 1
                    print(f"run {name}/{mode}/seed{seed} failed: {exc}",
                          file=sys.stderr)
                    continue
                rows.append(metric_row(metrics, workload=name))
                if metrics.status != "ok":
                    failed += 1
                    continue
                if alone is None:
                    alone = _alone_ipcs(cfg_dict, cfg, seed)
                ws = weighted_speedup(metrics, alone)
                summary.append({
                    "workload": name,
                    "apps": str(metrics.apps),
                    "mode": mode,
                    "seed": str(seed),
                    "weighted_speedup": repr(ws),
                })

    out = open(args.output, "w", newline="") if args.output else sys.stdout
    try:
        _write_rows(rows, CSV_COLUMNS, out, args.json)
        out.write("\n")
        _write_rows(summary, SUMMARY_COLUMNS, out, args.json)
        _write_bucket_means(summary, out, args.json)
    finally:
        if args.output:
            out.close()
    return EXIT_RUN_FAILED if failed else 0


def _alone_ipcs(base_dict, shared_cfg, seed):
    profiles = shared_cfg.workload.resolved_profiles(seed)
    cores_per_app = shared_cfg.cores // shared_cfg.workload.num_apps
    return [run(_alone_config(base_dict, prof, seed, cores_per_app))
            for prof in profiles]


def _write_bucket_means(summary, out, as_json):
    """Mean weighted speedup per (application count, mode) bucket."""
    buckets = {}
    for row in summary:
        key = (int(row["apps"]), row["mode"])
        buckets.setdefault(key, []).append(float(row["weighted_speedup"]))
    rows = [{"apps": str(apps), "mode": mode,
             "runs": str(len(vals)),
             "mean_weighted_speedup": repr(sum(vals) / len(vals))}
            for (apps, mode), vals in sorted(buckets.items())]
    out.write("\n")
    _write_rows(rows, ["apps", "mode", "runs", "mean_weighted_speedup"],
                out, as_json)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="gvmsim",
        description="Trace-driven GPU memory-virtualization simulator")
    sub = p.add_subparsers(dest="command", required=True)

    pr = sub.add_parser("run", help="run one simulation")
    pr.add_argument("config", help="YAML run configuration")
    pr.add_argument("--name", default="", help="workload label in the CSV")
    pr.add_argument("--seed", type=int, default=None)
    pr.add_argument("--mode", choices=MODES, default=None)
    pr.add_argument("--paging", choices=PAGING_MODES, default=None)
    pr.add_argument("--interval", type=int, default=None,
                    help="emit interval stats every N cycles")
    pr.add_argument("--intervals", action="store_true",
                    help="append interval rows after the metrics row")
    pr.add_argument("-o", "--output", default=None,
                    help="write to a file instead of stdout")
    pr.add_argument("--json", action="store_true",
                    help="emit JSON instead of CSV")
    pr.set_defaults(func=cmd_run)

    ps = sub.add_parser("suite", help="run a mode sweep over workloads")
    ps.add_argument("suite", help="YAML suite description")
    ps.add_argument("-o", "--output", default=None)
    ps.add_argument("--json", action="store_true")
    ps.set_defaults(func=cmd_suite)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
