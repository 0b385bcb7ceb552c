"""Tracking-error statistics and timing tables from closed-loop run logs.

Errors are recomputed offline against the full path (exact brute-force
closest point), segmented by path curvature class, and reported in
centimeters. Means use steady-state samples only; the initial transient is
excluded.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .simulate import RunLog, segment_class
from .trajectory import PathSpec

STEADY_START_S = 10.0

CLASS_ORDER = ("straight", "curve_0.100", "curve_0.125", "curve_0.150")


@dataclass
class SegmentStats:
    mean_cm: float
    median_cm: float
    max_cm: float
    count: int


@dataclass
class TimingStats:
    minimum_ms: float
    average_ms: float
    maximum_ms: float


@dataclass
class ErrorReport:
    """Per-class error statistics plus tube share and timing summaries."""

    tractor: dict = field(default_factory=dict)
    trailer: dict = field(default_factory=dict)
    tube_share_tractor_pct: float = 0.0
    tube_share_trailer_pct: float = 0.0
    timings: dict = field(default_factory=dict)
    steady_start_s: float = STEADY_START_S
    mode: str = ""

    def classes(self) -> list[str]:
        known = [c for c in CLASS_ORDER if c in self.tractor]
        extra = sorted(c for c in self.tractor if c not in CLASS_ORDER)
        return known + extra

    def render_text(self, include_timings: bool = True) -> str:
        lines = ["# fieldtrack error report",
                 f"steady_start_s = {self.steady_start_s:.3f}",
                 f"mode = {self.mode}"]
        for vehicle, stats in (("tractor", self.tractor), ("trailer", self.trailer)):
            lines.append(f"[errors.{vehicle}]")
            for cls in self.classes():
                st = stats[cls]
                lines.append(f"{cls}.mean_cm = {st.mean_cm:.4f}")
                lines.append(f"{cls}.median_cm = {st.median_cm:.4f}")
                lines.append(f"{cls}.max_cm = {st.max_cm:.4f}")
                lines.append(f"{cls}.count = {st.count}")
        lines.append("[tube]")
        lines.append(f"tractor_share_pct = {self.tube_share_tractor_pct:.4f}")
        lines.append(f"trailer_share_pct = {self.tube_share_trailer_pct:.4f}")
        if include_timings:
            for name in sorted(self.timings):
                lines.append(f"[timing.{name}]")
                for phase in ("preparation", "feedback", "overall"):
                    st = self.timings[name][phase]
                    lines.append(f"{phase}.min_ms = {st.minimum_ms:.4f}")
                    lines.append(f"{phase}.avg_ms = {st.average_ms:.4f}")
                    lines.append(f"{phase}.max_ms = {st.maximum_ms:.4f}")
        return "\n".join(lines) + "\n"

    def write(self, file_path, include_timings: bool = True) -> None:
        with open(file_path, "w") as fh:
            fh.write(self.render_text(include_timings))


def _segment_distance(path: PathSpec, point_index: int, qx: float,
                      qy: float) -> float:
    """Distance from a query to the polyline near its closest sample point."""
    n = len(path)
    best = math.hypot(qx - path.x[point_index], qy - path.y[point_index])
    for a in (point_index - 1, point_index):
        if path.closed:
            i0, i1 = a % n, (a + 1) % n
        elif a < 0 or a + 1 >= n:
            continue
        else:
            i0, i1 = a, a + 1
        ax, ay = path.x[i0], path.y[i0]
        vx, vy = path.x[i1] - ax, path.y[i1] - ay
        vv = vx * vx + vy * vy
        if vv == 0.0:
            continue
        s = min(max(((qx - ax) * vx + (qy - ay) * vy) / vv, 0.0), 1.0)
        best = min(best, math.hypot(qx - (ax + s * vx), qy - (ay + s * vy)))
    return best


def euclidean_error_series(log: RunLog, path: PathSpec):
    """Exact per-step distances to the path plus segment labels.

    Distances project onto the polyline segments adjacent to the closest
    sample point, so driving exactly on the path reads as zero error rather
    than the point-grid sawtooth. This is the offline oracle; the
    warm-started point-based search logged during the run must agree with it
    to within the path spacing.
    """
    if len(log) == 0:
        raise ValueError("run log is empty")
    labels = np.empty(len(log), dtype=object)
    errors = []
    for vehicle in ("tractor", "trailer"):
        pos = log.positions(vehicle)
        err = np.empty(len(log))
        chunk = 512
        for lo in range(0, len(log), chunk):
            hi = min(lo + chunk, len(log))
            dx = pos[lo:hi, 0:1] - path.x[None, :]
            dy = pos[lo:hi, 1:2] - path.y[None, :]
            d2 = dx * dx + dy * dy
            idx = np.argmin(d2, axis=1)
            for row, j in enumerate(idx):
                err[lo + row] = _segment_distance(path, int(j),
                                                  pos[lo + row, 0],
                                                  pos[lo + row, 1])
                if vehicle == "tractor":
                    labels[lo + row] = segment_class(str(path.kind[j]),
                                                     float(path.curvature[j]))
        errors.append(err)
    return errors[0], errors[1], labels


def _segment_stats(err_m: np.ndarray) -> SegmentStats:
    cm = 100.0 * err_m
    return SegmentStats(float(np.mean(cm)), float(np.median(cm)),
                        float(np.max(cm)), int(cm.size))


def _timing_stats(values_ms: np.ndarray) -> TimingStats:
    return TimingStats(float(np.min(values_ms)), float(np.mean(values_ms)),
                       float(np.max(values_ms)))


def summarize(log: RunLog, path: PathSpec | None = None,
              steady_start_s: float = STEADY_START_S) -> ErrorReport:
    """Aggregate a run into per-class error statistics and timing tables."""
    if path is None:
        path = log.path
    if path is None:
        raise ValueError("a path is required to summarize a run")
    err_t, err_i, labels = euclidean_error_series(log, path)
    t = log.column("t")
    steady = t >= steady_start_s
    if not np.any(steady):
        raise ValueError("steady-state window is empty; run too short")

    report = ErrorReport(steady_start_s=steady_start_s,
                         mode=log.config.mode if log.config else "")
    for cls in np.unique(labels[steady]):
        mask = steady & (labels == cls)
        report.tractor[cls] = _segment_stats(err_t[mask])
        report.trailer[cls] = _segment_stats(err_i[mask])

    corr_t = np.abs(log.column("tube_corr_t")[steady])
    corr_i = np.abs(log.column("tube_corr_i")[steady])
    app_t = np.abs(log.column("delta_t_applied")[steady])
    app_i = np.abs(log.column("delta_i_applied")[steady])
    report.tube_share_tractor_pct = _share_pct(corr_t, app_t)
    report.tube_share_trailer_pct = _share_pct(corr_i, app_i)

    for name, prefix in (("tractor", "tractor"), ("trailer", "trailer"),
                         ("centralized", "cen")):
        prep = log.timing(f"{prefix}_prep_ms")
        fb = log.timing(f"{prefix}_fb_ms")
        if prep.size == 0 or not np.any(prep + fb > 0.0):
            continue
        report.timings[name] = {
            "preparation": _timing_stats(prep),
            "feedback": _timing_stats(fb),
            "overall": _timing_stats(prep + fb),
        }
    return report


def _share_pct(correction: np.ndarray, applied: np.ndarray) -> float:
    denom = float(np.mean(applied))
    if denom <= 0.0:
        return 0.0
    return 100.0 * float(np.mean(correction)) / denom


def class_means_cm(report: ErrorReport, vehicle: str = "tractor") -> dict:
    stats = getattr(report, vehicle)
    return {cls: st.mean_cm for cls, st in stats.items()}


def compare_reports(report_a: ErrorReport, report_b: ErrorReport,
                    label_a: str = "A", label_b: str = "B") -> str:
    """Side-by-side per-class mean errors and timing medians of two runs."""
    lines = [f"# comparison: {label_a} vs {label_b}"]
    for vehicle in ("tractor", "trailer"):
        lines.append(f"[{vehicle}.mean_cm]")
        classes = sorted(set(getattr(report_a, vehicle))
                         | set(getattr(report_b, vehicle)))
        for cls in classes:
            a = getattr(report_a, vehicle).get(cls)
            b = getattr(report_b, vehicle).get(cls)
            a_txt = f"{a.mean_cm:.4f}" if a else "n/a"
            b_txt = f"{b.mean_cm:.4f}" if b else "n/a"
            delta = (f"{b.mean_cm - a.mean_cm:+.4f}" if a and b else "n/a")
            lines.append(f"{cls}: {label_a}={a_txt} {label_b}={b_txt} delta={delta}")
    lines.append("[timing.overall_avg_ms]")
    names = sorted(set(report_a.timings) | set(report_b.timings))
    for name in names:
        a = report_a.timings.get(name)
        b = report_b.timings.get(name)
        a_txt = f"{a['overall'].average_ms:.4f}" if a else "n/a"
        b_txt = f"{b['overall'].average_ms:.4f}" if b else "n/a"
        lines.append(f"{name}: {label_a}={a_txt} {label_b}={b_txt}")
    return "\n".join(lines) + "\n"
