"""Space-based reference paths and look-ahead reference generation.

Paths are dense polylines sampled at most 0.1 m apart, labeled per point
with segment kind and curvature. Reference windows for the controllers are
anchored a fixed arc length ahead of the closest on-path point.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .vehicle import VehicleState

KIND_STRAIGHT = "straight"
KIND_CURVE = "curve"


@dataclass
class PathSpec:
    """Polyline path with arc-length parameterization and per-point labels."""

    s: np.ndarray
    x: np.ndarray
    y: np.ndarray
    segment_id: np.ndarray
    kind: np.ndarray
    curvature: np.ndarray
    closed: bool = True
    total_length: float = 0.0

    def __post_init__(self) -> None:
        if self.total_length <= 0.0:
            self.total_length = float(self.s[-1])

    def __len__(self) -> int:
        return int(self.s.size)

    def point(self, index: int) -> np.ndarray:
        return np.array([self.x[index], self.y[index]])

    def heading(self, index: int) -> float:
        """Tangent direction at a point, from the next chord (previous at the end)."""
        j = index + 1 if index + 1 < len(self) else index
        i = index if j > index else index - 1
        return math.atan2(self.y[j] - self.y[i], self.x[j] - self.x[i])

    def to_csv(self, file_path) -> None:
        with open(file_path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["s", "x", "y", "kind", "curvature"])
            for i in range(len(self)):
                writer.writerow([f"{self.s[i]:.6f}", f"{self.x[i]:.6f}",
                                 f"{self.y[i]:.6f}", str(self.kind[i]),
                                 f"{self.curvature[i]:.6f}"])

    @classmethod
    def from_csv(cls, file_path) -> "PathSpec":
        s, x, y, kind, curv = [], [], [], [], []
        with open(file_path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            if header != ["s", "x", "y", "kind", "curvature"]:
                raise ValueError(f"unexpected path CSV header: {header}")
            for row in reader:
                s.append(float(row[0]))
                x.append(float(row[1]))
                y.append(float(row[2]))
                kind.append(row[3])
                curv.append(float(row[4]))
        s = np.asarray(s)
        x = np.asarray(x)
        y = np.asarray(y)
        kind = np.asarray(kind)
        curv = np.asarray(curv)
        # Segment ids are recovered from label changes; adjacent segments of
        # identical kind and curvature merge, which the consumers tolerate.
        seg = np.zeros(len(s), dtype=int)
        for i in range(1, len(s)):
            changed = kind[i] != kind[i - 1] or curv[i] != curv[i - 1]
            seg[i] = seg[i - 1] + (1 if changed else 0)
        spacing = float(np.max(np.diff(s))) if len(s) > 1 else 0.1
        gap = math.hypot(x[0] - x[-1], y[0] - y[-1])
        closed = gap <= 2.0 * spacing
        total = float(s[-1] + gap) if closed else float(s[-1])
        return cls(s, x, y, seg, kind, curv, closed=closed, total_length=total)


class _PathBuilder:
    """Accumulates straight and arc segments into PathSpec arrays."""

    def __init__(self, x0: float, y0: float, heading: float, spacing: float):
        self.spacing = spacing
        self.x = x0
        self.y = y0
        self.heading = heading
        self.s_now = 0.0
        self.next_segment = 0
        self.cols = {"s": [], "x": [], "y": [], "seg": [], "kind": [], "curv": []}
        self._start_pending = True

    def _emit(self, s, x, y, kind, curv):
        c = self.cols
        c["s"].append(s)
        c["x"].append(x)
        c["y"].append(y)
        c["seg"].append(self.next_segment)
        c["kind"].append(kind)
        c["curv"].append(curv)

    def _start_segment(self, kind, curv):
        if self._start_pending:
            self._emit(0.0, self.x, self.y, kind, curv)
            self._start_pending = False

    def straight(self, length: float) -> None:
        if length <= 0.0:
            raise ValueError("straight length must be positive")
        self._start_segment(KIND_STRAIGHT, 0.0)
        n = max(1, math.ceil(length / self.spacing))
        h = length / n
        cx, cy = math.cos(self.heading), math.sin(self.heading)
        x0, y0, s0 = self.x, self.y, self.s_now
        for j in range(1, n + 1):
            self._emit(s0 + j * h, x0 + j * h * cx, y0 + j * h * cy,
                       KIND_STRAIGHT, 0.0)
        self.x = x0 + length * cx
        self.y = y0 + length * cy
        self.s_now = s0 + length
        self.next_segment += 1

    def arc(self, radius: float, sweep: float, left: bool) -> None:
        if radius <= 0.0 or sweep <= 0.0:
            raise ValueError("arc radius and sweep must be positive")
        self._start_segment(KIND_CURVE, 1.0 / radius)
        sign = 1.0 if left else -1.0
        cx = self.x - sign * radius * math.sin(self.heading)
        cy = self.y + sign * radius * math.cos(self.heading)
        phi0 = math.atan2(self.y - cy, self.x - cx)
        n = max(1, math.ceil(radius * sweep / self.spacing))
        dphi = sweep / n
        s0 = self.s_now
        for j in range(1, n + 1):
            phi = phi0 + sign * j * dphi
            self._emit(s0 + j * radius * dphi,
                       cx + radius * math.cos(phi),
                       cy + radius * math.sin(phi),
                       KIND_CURVE, 1.0 / radius)
        self.heading += sign * sweep
        phi_end = phi0 + sign * sweep
        self.x = cx + radius * math.cos(phi_end)
        self.y = cy + radius * math.sin(phi_end)
        self.s_now = s0 + radius * sweep
        self.next_segment += 1

    def finish(self, closed: bool, total_length: float | None = None) -> PathSpec:
        c = self.cols
        s = np.asarray(c["s"])
        x = np.asarray(c["x"])
        y = np.asarray(c["y"])
        seg = np.asarray(c["seg"], dtype=int)
        kind = np.asarray(c["kind"])
        curv = np.asarray(c["curv"])
        if closed and len(s) > 1:
            # Drop the closure point; wrap arithmetic covers the final gap.
            gap = math.hypot(x[-1] - x[0], y[-1] - y[0])
            if gap < 1e-9:
                s, x, y, seg, kind, curv = (a[:-1] for a in (s, x, y, seg, kind, curv))
        return PathSpec(s, x, y, seg, kind, curv, closed=closed,
                        total_length=total_length if total_length else float(self.s_now))


def eight_lap_length(radius: float, straight_length: float) -> float:
    """Analytic lap length of one tangent-continuous crossing eight.

    Each arc sweeps 2*pi minus twice the straight-line inclination
    atan(S / 2r), which tangency forces once radius and straight length are
    fixed.
    """
    alpha = math.atan(straight_length / (2.0 * radius))
    return 2.0 * straight_length + 2.0 * radius * (math.tau - 2.0 * alpha)


def build_eight_shape(radii, straight_length: float = 20.0,
                      spacing: float = 0.1) -> PathSpec:
    """Concatenated eight-shaped laps, one per radius.

    Each lap is two straight lines crossing at the lap center and two arcs
    joined tangent-continuously. Consecutive laps share the start point and
    tangent, so the whole course is closed and C1 at the joins.
    """
    radii = [float(r) for r in radii]
    if not radii or any(r <= 0.0 for r in radii):
        raise ValueError("radii must be a non-empty list of positive lengths")
    if not 0.0 < spacing <= 0.1:
        raise ValueError("spacing must be in (0, 0.1]")
    if straight_length <= 0.0:
        raise ValueError("straight_length must be positive")

    b = _PathBuilder(0.0, 0.0, 0.0, spacing)
    total = 0.0
    for r in radii:
        alpha = math.atan(straight_length / (2.0 * r))
        sweep = math.tau - 2.0 * alpha
        b.straight(straight_length / 2.0)
        b.arc(r, sweep, left=True)
        b.straight(straight_length)
        b.arc(r, sweep, left=False)
        b.straight(straight_length / 2.0)
        total += eight_lap_length(r, straight_length)
    return b.finish(closed=True, total_length=total)


def build_circle(radius: float, spacing: float = 0.1, laps: float = 1.0,
                 left: bool = True) -> PathSpec:
    """Circle of the given radius centered at the origin, starting at (r, 0)."""
    if radius <= 0.0:
        raise ValueError("radius must be positive")
    b = _PathBuilder(radius, 0.0, math.pi / 2.0, spacing)
    b.arc(radius, math.tau * laps, left=left)
    closed = abs(laps - round(laps)) < 1e-12
    return b.finish(closed=closed, total_length=math.tau * radius * laps)


def build_straight(length: float, spacing: float = 0.1, heading: float = 0.0,
                   start=(0.0, 0.0)) -> PathSpec:
    """Open straight-line path."""
    b = _PathBuilder(start[0], start[1], heading, spacing)
    b.straight(length)
    return b.finish(closed=False, total_length=length)


def closest_point(path: PathSpec, query) -> tuple[int, float]:
    """Exhaustive closest-point search; ties break to the lowest index."""
    if len(path) == 0:
        raise ValueError("path is empty")
    d2 = (path.x - query[0]) ** 2 + (path.y - query[1]) ** 2
    idx = int(np.argmin(d2))
    return idx, float(math.sqrt(d2[idx]))


class PathCursor:
    """Warm-started closest-point search restricted to a +-window arc span.

    One cursor per consumer; the first query scans the whole path, later
    queries only the window around the previous match (wrapping on closed
    paths).
    """

    def __init__(self, path: PathSpec, window_m: float = 5.0):
        self.path = path
        self.window_m = float(window_m)
        self._last: int | None = None

    def reset(self) -> None:
        self._last = None

    def closest(self, query) -> tuple[int, float]:
        path = self.path
        if self._last is None:
            idx, dist = closest_point(path, query)
            self._last = idx
            return idx, dist
        s = path.s
        s0 = s[self._last]
        lo, hi = s0 - self.window_m, s0 + self.window_m
        if path.closed:
            total = path.total_length
            lo_w = lo % total
            hi_w = hi % total
            if hi - lo >= total:
                mask = np.ones(len(path), dtype=bool)
            elif lo_w <= hi_w:
                mask = (s >= lo_w) & (s <= hi_w)
            else:
                mask = (s >= lo_w) | (s <= hi_w)
        else:
            mask = (s >= lo) & (s <= hi)
        idxs = np.nonzero(mask)[0]
        if idxs.size == 0:
            idxs = np.arange(len(path))
        d2 = (path.x[idxs] - query[0]) ** 2 + (path.y[idxs] - query[1]) ** 2
        k = int(np.argmin(d2))
        idx = int(idxs[k])
        self._last = idx
        return idx, float(math.sqrt(d2[k]))


def index_at_arclength(path: PathSpec, s_target: float) -> int:
    """Index of the path point nearest to an arc-length coordinate."""
    s = path.s
    if path.closed:
        s_target = s_target % path.total_length
    else:
        s_target = min(max(s_target, float(s[0])), float(s[-1]))
    j = int(np.searchsorted(s, s_target))
    if j <= 0:
        return 0
    if j >= len(path):
        # Between the last point and the closure point; pick the closer end.
        if path.closed and path.total_length - s_target < s_target - s[-1]:
            return 0
        return len(path) - 1
    return j if s[j] - s_target < s_target - s[j - 1] else j - 1


@dataclass
class ReferenceWindow:
    """Per-step horizon of references for both vehicles.

    Yaw references are identically zero; the controllers do not weight yaw.
    """

    tractor: np.ndarray  # (N+1, 3) of x, y, theta_ref
    trailer: np.ndarray  # (N+1, 3) of x, y, psi_ref
    delta_t_ref: float = 0.0
    delta_i_ref: float = 0.0


def _window_from(path: PathSpec, anchor_s: float, horizon: int,
                 step_m: float) -> np.ndarray:
    out = np.zeros((horizon + 1, 3))
    for j in range(horizon + 1):
        idx = index_at_arclength(path, anchor_s + j * step_m)
        out[j, 0] = path.x[idx]
        out[j, 1] = path.y[idx]
    return out


def lookahead_reference(path: PathSpec, est: VehicleState, lookahead: float,
                        horizon: int, v_ref: float, dt: float, *,
                        tractor_cursor: PathCursor | None = None,
                        trailer_cursor: PathCursor | None = None,
                        delta_t_ref: float = 0.0,
                        delta_i_ref: float = 0.0) -> ReferenceWindow:
    """Reference windows anchored `lookahead` meters ahead of each vehicle.

    The anchor is measured by arc length from the closest on-path point of
    the respective vehicle estimate; window entries advance by v_ref*dt.
    """
    if lookahead < 0.0:
        raise ValueError("lookahead must be nonnegative")
    step = v_ref * dt
    if tractor_cursor is not None:
        idx_t, _ = tractor_cursor.closest((est.x_t, est.y_t))
    else:
        idx_t, _ = closest_point(path, (est.x_t, est.y_t))
    if trailer_cursor is not None:
        idx_i, _ = trailer_cursor.closest((est.x_i, est.y_i))
    else:
        idx_i, _ = closest_point(path, (est.x_i, est.y_i))
    win_t = _window_from(path, float(path.s[idx_t]) + lookahead, horizon, step)
    win_i = _window_from(path, float(path.s[idx_i]) + lookahead, horizon, step)
    return ReferenceWindow(win_t, win_i, delta_t_ref, delta_i_ref)
