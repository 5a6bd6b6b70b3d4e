"""Command-line harness.

    hmdlab run <recipe> [--config FILE] [--seed N ...] [--out DIR] ...
    hmdlab plot-data <report.json> --figure <id> [--out FILE]
    hmdlab validate-config <FILE>

Flags win over the config file; the file wins over defaults. HMDLAB_OUT sets
the default output directory.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import replace

from .errors import HmdlabError
from .experiments import (
    RECIPES,
    ExperimentConfig,
    emit_plot_data,
    run,
    write_plot_csv,
    write_report,
)


def _build_parser():
    p = argparse.ArgumentParser(prog="hmdlab")
    sub = p.add_subparsers(dest="command", required=True)

    rp = sub.add_parser("run", help="execute an experiment recipe")
    rp.add_argument("recipe", choices=RECIPES)
    rp.add_argument("--config", help="JSON config file")
    rp.add_argument("--seed", type=int, action="append", dest="seeds")
    rp.add_argument("--out", help="output directory (default: $HMDLAB_OUT)")
    rp.add_argument("--csv", dest="csv_path", help="ingest traces from CSV")
    rp.add_argument("--epsilon", type=float)
    rp.add_argument("--policy", choices=["uniform", "priority"])
    rp.add_argument("--ht", type=int, dest="h_t")
    rp.add_argument("--rmax", type=int, dest="r_max")
    rp.add_argument("--single-h", type=int, dest="single_h")
    rp.add_argument("--n-benign", type=int, dest="n_benign")
    rp.add_argument("--n-malware", type=int, dest="n_malware")
    rp.add_argument("--n-test", type=int, dest="n_test_per_class")
    rp.add_argument("--iterations", type=int)
    rp.add_argument("--epochs", type=int)
    rp.add_argument("--include-records", action="store_true", default=None)

    pp = sub.add_parser("plot-data", help="project a report into a tidy CSV")
    pp.add_argument("report", help="report JSON file")
    pp.add_argument("--figure", required=True)
    pp.add_argument("--out", help="CSV path (default: stdout)")

    vp = sub.add_parser("validate-config", help="check a config file")
    vp.add_argument("config")
    return p


_RUN_OVERRIDES = (
    "seeds",
    "csv_path",
    "epsilon",
    "policy",
    "h_t",
    "r_max",
    "single_h",
    "n_benign",
    "n_malware",
    "n_test_per_class",
    "iterations",
    "epochs",
    "include_records",
)


def _config_from_args(args):
    if args.config:
        cfg = ExperimentConfig.from_file(args.config)
        cfg = replace(cfg, recipe=args.recipe)
    else:
        cfg = ExperimentConfig(recipe=args.recipe)
    overrides = {}
    for name in _RUN_OVERRIDES:
        value = getattr(args, name, None)
        if value is not None:
            overrides[name] = tuple(value) if name == "seeds" else value
    out_dir = args.out or os.environ.get("HMDLAB_OUT") or cfg.out_dir
    if out_dir:
        overrides["out_dir"] = out_dir
    return replace(cfg, **overrides) if overrides else cfg


def main(argv=None):
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "run":
            cfg = _config_from_args(args)
            report = run(cfg)
            if cfg.out_dir:
                print(write_report(report, cfg.out_dir))
            else:
                json.dump(report, sys.stdout, indent=2, sort_keys=True)
                print()
        elif args.command == "plot-data":
            with open(args.report, "r", encoding="utf-8") as fh:
                report = json.load(fh)
            rows = emit_plot_data(report, args.figure)
            if args.out:
                write_plot_csv(rows, args.out)
                print(args.out)
            else:
                print("series,x,y")
                for series, x, y in rows:
                    print(f"{series},{x},{y}")
        else:  # validate-config
            ExperimentConfig.from_file(args.config)
            print("ok")
    except HmdlabError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
