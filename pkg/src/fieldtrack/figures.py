"""Static figure rendering for run artifacts; written next to the CSVs."""

from __future__ import annotations

import os

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .simulate import RunLog
from .trajectory import PathSpec


def render_run_figures(log: RunLog, path: PathSpec, outdir) -> list[str]:
    os.makedirs(outdir, exist_ok=True)
    written = []
    written.append(_trajectory_figure(log, path, outdir))
    written.append(_error_figure(log, outdir))
    written.append(_slip_figure(log, outdir))
    written.append(_steering_figure(log, outdir))
    return written


def _save(fig, outdir, name) -> str:
    target = os.path.join(outdir, name)
    fig.savefig(target, dpi=130, bbox_inches="tight")
    plt.close(fig)
    return target


def _trajectory_figure(log: RunLog, path: PathSpec, outdir) -> str:
    fig, ax = plt.subplots(figsize=(7, 7))
    ax.plot(path.x, path.y, color="0.6", lw=0.8, label="reference path")
    ax.plot(log.column("true_x_t"), log.column("true_y_t"), "b-", lw=1.0,
            label="tractor")
    ax.plot(log.column("true_x_i"), log.column("true_y_i"), "r--", lw=1.0,
            label="trailer")
    ax.set_xlabel("x [m]")
    ax.set_ylabel("y [m]")
    ax.set_aspect("equal")
    ax.legend(loc="best", fontsize=8)
    ax.set_title("Reference and actual trajectories")
    return _save(fig, outdir, "trajectory.png")


def _error_figure(log: RunLog, outdir) -> str:
    fig, ax = plt.subplots(figsize=(8, 3.2))
    t = log.column("t")
    ax.plot(t, 100.0 * log.column("err_tractor"), "b-", lw=0.9, label="tractor")
    ax.plot(t, 100.0 * log.column("err_trailer"), "r--", lw=0.9, label="trailer")
    ax.set_xlabel("t [s]")
    ax.set_ylabel("distance to path [cm]")
    ax.legend(loc="best", fontsize=8)
    ax.set_title("Tracking error")
    return _save(fig, outdir, "tracking_error.png")


def _slip_figure(log: RunLog, outdir) -> str:
    fig, ax = plt.subplots(figsize=(8, 3.2))
    t = log.column("t")
    ax.plot(t, log.column("est_mu"), label="mu")
    ax.plot(t, log.column("est_kappa"), label="kappa")
    ax.plot(t, log.column("est_eta"), label="eta")
    ax.plot(t, log.column("slip_true"), "k:", lw=1.0, label="true")
    ax.set_xlabel("t [s]")
    ax.set_ylabel("slip coefficient")
    ax.set_ylim(0.0, 1.1)
    ax.legend(loc="best", fontsize=8)
    ax.set_title("Slip coefficient estimates")
    return _save(fig, outdir, "slip_estimates.png")


def _steering_figure(log: RunLog, outdir) -> str:
    fig, axes = plt.subplots(2, 1, figsize=(8, 5), sharex=True)
    t = log.column("t")
    for ax, nom, app, label in (
            (axes[0], "delta_t_nom", "delta_t_applied", "tractor"),
            (axes[1], "delta_i_nom", "delta_i_applied", "trailer")):
        ax.plot(t, np.degrees(log.column(nom)), "b-", lw=0.9, label="nominal")
        ax.plot(t, np.degrees(log.column(app)), "r--", lw=0.9, label="applied")
        ax.set_ylabel(f"{label} steering [deg]")
        ax.legend(loc="best", fontsize=8)
    axes[1].set_xlabel("t [s]")
    axes[0].set_title("Steering commands")
    return _save(fig, outdir, "steering.png")


def render_compare_figure(means_a: dict, means_b: dict, label_a: str,
                          label_b: str, outdir) -> str:
    classes = sorted(set(means_a) | set(means_b))
    xs = np.arange(len(classes))
    width = 0.38
    fig, ax = plt.subplots(figsize=(7, 3.5))
    ax.bar(xs - width / 2, [means_a.get(c, np.nan) for c in classes], width,
           label=label_a)
    ax.bar(xs + width / 2, [means_b.get(c, np.nan) for c in classes], width,
           label=label_b)
    ax.set_xticks(xs, classes, rotation=20, fontsize=8)
    ax.set_ylabel("mean error [cm]")
    ax.legend(fontsize=8)
    ax.set_title("Per-class mean tracking error")
    return _save(fig, outdir, "compare.png")
