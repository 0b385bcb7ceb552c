"""Command-line front end: simulate, compare, path, and report.

Exit codes: 0 on success, 1 on runtime failure (bad config values, missing
files, aborted runs), 2 on usage errors.
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import replace

import numpy as np

from . import __version__
from .config import ConfigError, apply_tube_flag, load_config, write_default_config
from .figures import render_compare_figure, render_run_figures
from .metrics import class_means_cm, compare_reports, summarize
from .simulate import MODES, RunLog, ScenarioConfig, build_path, run_closed_loop
from .trajectory import build_circle, build_eight_shape, build_straight


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fieldtrack",
        description="Closed-loop tractor-trailer tracking scenarios")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="run one scenario and write artifacts")
    sim.add_argument("--config", help="scenario configuration file")
    sim.add_argument("--seed", type=int, help="override the RNG seed")
    sim.add_argument("--out", default="runs/latest", help="output directory")
    sim.add_argument("--mode", choices=MODES, help="override controller mode")
    sim.add_argument("--tube", choices=("on", "off"), help="toggle the tube layer")
    sim.add_argument("--no-figures", action="store_true",
                     help="skip figure rendering")

    cmp_p = sub.add_parser("compare", help="paired-seed comparison of two configs")
    cmp_p.add_argument("config_a")
    cmp_p.add_argument("config_b")
    cmp_p.add_argument("--seeds", type=int, default=5,
                       help="number of paired seeds")
    cmp_p.add_argument("--seed0", type=int, default=1, help="first seed")
    cmp_p.add_argument("--out", default="runs/compare", help="output directory")
    cmp_p.add_argument("--no-figures", action="store_true")

    path_p = sub.add_parser("path", help="emit a reference path CSV")
    path_p.add_argument("--kind", choices=("eights", "circle", "straight"),
                        default="eights")
    path_p.add_argument("--radii", default="10,8,6.67",
                        help="comma-separated radii (eights) or one radius (circle)")
    path_p.add_argument("--straight-length", type=float, default=20.0)
    path_p.add_argument("--spacing", type=float, default=0.1)
    path_p.add_argument("--out", default="path.csv")

    rep = sub.add_parser("report", help="recompute the error report of a run")
    rep.add_argument("rundir", help="directory holding run.csv and path.csv")
    rep.add_argument("--out", help="output directory (default: the run dir)")
    rep.add_argument("--no-figures", action="store_true")

    init = sub.add_parser("init-config", help="write a default configuration file")
    init.add_argument("--out", default="default.cfg")
    return parser


def _load_scenario(args) -> ScenarioConfig:
    if args.config:
        config = load_config(args.config)
    else:
        config = ScenarioConfig()
    if args.seed is not None:
        config.seed = args.seed
    if args.mode is not None:
        config.mode = args.mode
    if args.tube is not None:
        apply_tube_flag(config, args.tube == "on")
    config.validate()
    return config


def _cmd_simulate(args) -> int:
    config = _load_scenario(args)
    log = run_closed_loop(config)
    os.makedirs(args.out, exist_ok=True)
    log.write_dir(args.out)
    report = summarize(log)
    report.write(os.path.join(args.out, "report.txt"))
    if not args.no_figures:
        render_run_figures(log, log.path, args.out)
    if log.aborted:
        print(f"run aborted: {log.aborted}", file=sys.stderr)
        return 1
    print(f"wrote {args.out} ({len(log)} steps)")
    return 0


def _cmd_compare(args) -> int:
    config_a = load_config(args.config_a)
    config_b = load_config(args.config_b)
    seeds = [args.seed0 + i for i in range(args.seeds)]
    label_a = os.path.splitext(os.path.basename(args.config_a))[0]
    label_b = os.path.splitext(os.path.basename(args.config_b))[0]

    reports = {label_a: [], label_b: []}
    for label, base in ((label_a, config_a), (label_b, config_b)):
        for seed in seeds:
            config = replace(base, seed=seed)
            log = run_closed_loop(config)
            if log.aborted:
                print(f"{label} seed {seed} aborted: {log.aborted}",
                      file=sys.stderr)
                return 1
            reports[label].append(summarize(log))

    os.makedirs(args.out, exist_ok=True)
    merged_a = _median_report(reports[label_a])
    merged_b = _median_report(reports[label_b])
    text = compare_reports(merged_a, merged_b, label_a, label_b)
    with open(os.path.join(args.out, "compare.txt"), "w") as fh:
        fh.write(text)
    if not args.no_figures:
        render_compare_figure(class_means_cm(merged_a), class_means_cm(merged_b),
                              label_a, label_b, args.out)
    print(text, end="")
    return 0


def _median_report(reports):
    """Collapse per-seed reports into one with median per-class means."""
    from .metrics import ErrorReport, SegmentStats

    merged = ErrorReport(mode=reports[0].mode,
                         steady_start_s=reports[0].steady_start_s)
    for vehicle in ("tractor", "trailer"):
        classes = set()
        for rep in reports:
            classes |= set(getattr(rep, vehicle))
        for cls in classes:
            means = [getattr(r, vehicle)[cls].mean_cm
                     for r in reports if cls in getattr(r, vehicle)]
            medians = [getattr(r, vehicle)[cls].median_cm
                       for r in reports if cls in getattr(r, vehicle)]
            maxes = [getattr(r, vehicle)[cls].max_cm
                     for r in reports if cls in getattr(r, vehicle)]
            counts = [getattr(r, vehicle)[cls].count
                      for r in reports if cls in getattr(r, vehicle)]
            getattr(merged, vehicle)[cls] = SegmentStats(
                float(np.median(means)), float(np.median(medians)),
                float(np.max(maxes)), int(np.sum(counts)))
    for name in reports[0].timings:
        merged.timings[name] = reports[0].timings[name]
    return merged


def _cmd_path(args) -> int:
    radii = [float(r) for r in args.radii.replace(",", " ").split()]
    if args.kind == "eights":
        path = build_eight_shape(radii, args.straight_length, args.spacing)
    elif args.kind == "circle":
        path = build_circle(radii[0], args.spacing)
    else:
        path = build_straight(args.straight_length, args.spacing)
    path.to_csv(args.out)
    print(f"wrote {args.out} ({len(path)} points, {path.total_length:.1f} m)")
    return 0


def _cmd_report(args) -> int:
    log = RunLog.from_dir(args.rundir)
    if log.path is None:
        raise FileNotFoundError(f"no path.csv found in {args.rundir}")
    outdir = args.out or args.rundir
    os.makedirs(outdir, exist_ok=True)
    report = summarize(log)
    report.write(os.path.join(outdir, "report.txt"))
    if not args.no_figures:
        render_run_figures(log, log.path, outdir)
    print(report.render_text(include_timings=False), end="")
    return 0


def _cmd_init_config(args) -> int:
    write_default_config(args.out)
    print(f"wrote {args.out}")
    return 0


_COMMANDS = {
    "simulate": _cmd_simulate,
    "compare": _cmd_compare,
    "path": _cmd_path,
    "report": _cmd_report,
    "init-config": _cmd_init_config,
}


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except (ConfigError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
