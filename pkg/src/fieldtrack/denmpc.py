"""Decentralized NMPC controllers with tube-based ancillary feedback.

Two independent tracking controllers (tractor, trailer) each solve one
real-time Gauss-Newton iteration per sampling period over their decoupled
three-state model. A centralized controller over the full coupled model
serves as the timing baseline. The tube layer adds a fixed linear yaw-error
feedback on top of the nominal command and clamps the result to the input
bounds.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .rti import OcpProblem, OcpSolution, RtiSolver, reference_warm_start, shift_warm_start
from .vehicle import (DELTA_I_MAX, DELTA_T_MAX, SlipParams, VehicleGeometry,
                      rk4_step, tractor_subsystem_dynamics,
                      trailer_subsystem_dynamics, wrap_angle, _full_rates)

DEFAULT_TUBE_GAIN = np.array([0.0, 0.0, -3.0])


@dataclass(frozen=True)
class ControllerWeights:
    """Stage, input, and terminal weights of the tracking cost."""

    q_xy: float = 1.0
    q_yaw: float = 0.0
    r_input: float = 10.0
    s_xy: float = 10.0
    s_yaw: float = 0.0

    def __post_init__(self) -> None:
        if self.q_xy <= 0.0 or self.s_xy <= 0.0:
            raise ValueError("position weights must be positive")
        if self.r_input <= 0.0:
            raise ValueError("input weight must be positive")
        if self.q_yaw < 0.0 or self.s_yaw < 0.0:
            raise ValueError("yaw weights must be nonnegative")

    def stage_matrix(self) -> np.ndarray:
        return np.diag([self.q_xy, self.q_xy, self.q_yaw, self.r_input])

    def terminal_matrix(self) -> np.ndarray:
        return np.diag([self.s_xy, self.s_xy, self.s_yaw])


@dataclass
class ControlResult:
    delta: float
    solution: OcpSolution
    stale: bool = False


@dataclass
class CentralResult:
    delta_t: float
    delta_i: float
    solution: OcpSolution
    stale: bool = False


class _TrackingNmpc:
    """Shared machinery of the three-state subsystem controllers."""

    n_x = 3
    n_u = 1

    def __init__(self, geom: VehicleGeometry, horizon: int = 15, dt: float = 0.2,
                 weights: ControllerWeights | None = None,
                 input_bound: float = DELTA_T_MAX):
        self.geom = geom
        self.dt = dt
        self.weights = weights or ControllerWeights()
        self._refs = np.zeros((horizon + 1, 3))
        self._delta_ref = 0.0
        self._last: OcpSolution | None = None
        self.problem = OcpProblem(
            horizon=horizon, n_x=3, n_u=1,
            dynamics=self._dynamics,
            stage_residual=self._stage_residual,
            stage_weight=self.weights.stage_matrix(),
            terminal_residual=self._terminal_residual,
            terminal_weight=self.weights.terminal_matrix(),
            u_lower=np.array([-input_bound]),
            u_upper=np.array([input_bound]),
        )
        self.solver = RtiSolver(self.problem)

    def _rates(self, x: np.ndarray, u: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def _dynamics(self, x, u, p) -> np.ndarray:
        return rk4_step(self._rates, x, u, self.dt)

    def _stage_residual(self, k, x, u, p) -> np.ndarray:
        r = self._refs[k]
        return np.array([x[0] - r[0], x[1] - r[1], x[2] - r[2],
                         u[0] - self._delta_ref])

    def _terminal_residual(self, x, p) -> np.ndarray:
        r = self._refs[-1]
        return np.array([x[0] - r[0], x[1] - r[1], x[2] - r[2]])

    def reset(self) -> None:
        self._last = None

    def _solve(self, estimate3: np.ndarray, refs: np.ndarray,
               delta_ref: float) -> tuple[float, OcpSolution, bool]:
        if refs.shape != (self.problem.horizon + 1, 3):
            raise ValueError("reference window does not match the horizon")
        self._refs = refs
        self._delta_ref = float(delta_ref)
        if self._last is None:
            warm = reference_warm_start(
                self.problem, estimate3,
                inputs=np.full((self.problem.horizon, 1), self._delta_ref))
        else:
            warm = shift_warm_start(self._last)
        self.solver.prepare(warm)
        sol = self.solver.feedback(estimate3)
        stale = sol.stale
        if not stale:
            self._last = sol
        command = float((self._last or sol).inputs[0, 0])
        return command, sol, stale


class TractorNmpc(_TrackingNmpc):
    """Tracking controller for the tractor subsystem."""

    def __init__(self, geom, horizon: int = 15, dt: float = 0.2, weights=None):
        super().__init__(geom, horizon, dt, weights, input_bound=DELTA_T_MAX)
        self._slip = SlipParams()
        self._v = 0.0

    def _rates(self, x, u):
        return tractor_subsystem_dynamics(x, float(u[0]), self._slip, self._v,
                                          self.geom)

    def solve(self, estimate3, refs, slip: SlipParams, v: float,
              delta_ref: float = 0.0) -> ControlResult:
        self._slip = slip
        self._v = float(v)
        command, sol, stale = self._solve(np.asarray(estimate3, dtype=float),
                                          np.asarray(refs, dtype=float), delta_ref)
        return ControlResult(command, sol, stale)


class TrailerNmpc(_TrackingNmpc):
    """Tracking controller for the trailer subsystem (coupling neglected)."""

    def __init__(self, geom, horizon: int = 15, dt: float = 0.2, weights=None):
        super().__init__(geom, horizon, dt, weights, input_bound=DELTA_I_MAX)
        self._slip = SlipParams()
        self._v = 0.0
        self._beta = 0.0

    def _rates(self, x, u):
        return trailer_subsystem_dynamics(x, float(u[0]), self._beta, self._slip,
                                          self._v, self.geom)

    def solve(self, estimate3, refs, slip: SlipParams, beta: float, v: float,
              delta_ref: float = 0.0) -> ControlResult:
        self._slip = slip
        self._beta = float(beta)
        self._v = float(v)
        command, sol, stale = self._solve(np.asarray(estimate3, dtype=float),
                                          np.asarray(refs, dtype=float), delta_ref)
        return ControlResult(command, sol, stale)


class CentralizedNmpc:
    """Baseline controller over the full coupled six-state model."""

    def __init__(self, geom: VehicleGeometry, horizon: int = 15, dt: float = 0.2,
                 weights: ControllerWeights | None = None):
        self.geom = geom
        self.dt = dt
        self.weights = weights or ControllerWeights()
        w = self.weights
        self._refs_t = np.zeros((horizon + 1, 3))
        self._refs_i = np.zeros((horizon + 1, 3))
        self._delta_refs = (0.0, 0.0)
        self._slip = SlipParams()
        self._beta = 0.0
        self._v = 0.0
        self._last: OcpSolution | None = None
        self.problem = OcpProblem(
            horizon=horizon, n_x=6, n_u=2,
            dynamics=self._dynamics,
            stage_residual=self._stage_residual,
            stage_weight=np.diag([w.q_xy, w.q_xy, w.q_yaw,
                                  w.q_xy, w.q_xy, w.q_yaw,
                                  w.r_input, w.r_input]),
            terminal_residual=self._terminal_residual,
            terminal_weight=np.diag([w.s_xy, w.s_xy, w.s_yaw,
                                     w.s_xy, w.s_xy, w.s_yaw]),
            u_lower=np.array([-DELTA_T_MAX, -DELTA_I_MAX]),
            u_upper=np.array([DELTA_T_MAX, DELTA_I_MAX]),
        )
        self.solver = RtiSolver(self.problem)

    def _rates(self, x, u):
        g = self.geom
        s = self._slip
        return np.array(_full_rates(x[2], x[5], self._beta, self._v,
                                    float(u[0]), float(u[1]),
                                    s.mu, s.kappa, s.eta,
                                    g.tractor_wheelbase, g.trailer_length,
                                    g.hitch_offset))

    def _dynamics(self, x, u, p):
        return rk4_step(self._rates, x, u, self.dt)

    def _stage_residual(self, k, x, u, p):
        rt = self._refs_t[k]
        ri = self._refs_i[k]
        return np.array([x[0] - rt[0], x[1] - rt[1], x[2] - rt[2],
                         x[3] - ri[0], x[4] - ri[1], x[5] - ri[2],
                         u[0] - self._delta_refs[0], u[1] - self._delta_refs[1]])

    def _terminal_residual(self, x, p):
        rt = self._refs_t[-1]
        ri = self._refs_i[-1]
        return np.array([x[0] - rt[0], x[1] - rt[1], x[2] - rt[2],
                         x[3] - ri[0], x[4] - ri[1], x[5] - ri[2]])

    def reset(self) -> None:
        self._last = None

    def solve(self, estimate6, refs_tractor, refs_trailer, slip: SlipParams,
              beta: float, v: float, delta_refs=(0.0, 0.0)) -> CentralResult:
        self._slip = slip
        self._beta = float(beta)
        self._v = float(v)
        self._refs_t = np.asarray(refs_tractor, dtype=float)
        self._refs_i = np.asarray(refs_trailer, dtype=float)
        self._delta_refs = (float(delta_refs[0]), float(delta_refs[1]))
        estimate6 = np.asarray(estimate6, dtype=float)
        if self._last is None:
            warm = reference_warm_start(
                self.problem, estimate6,
                inputs=np.tile(np.asarray(self._delta_refs), (self.problem.horizon, 1)))
        else:
            warm = shift_warm_start(self._last)
        self.solver.prepare(warm)
        sol = self.solver.feedback(estimate6)
        if not sol.stale:
            self._last = sol
        inputs = (self._last or sol).inputs
        return CentralResult(float(inputs[0, 0]), float(inputs[0, 1]), sol, sol.stale)


def tube_correction(nominal_state, estimate, nominal_input: float,
                    bounds: tuple[float, float],
                    gain: np.ndarray = DEFAULT_TUBE_GAIN) -> tuple[float, float]:
    """Ancillary feedback on the nominal command.

    Returns (applied_input, correction). The yaw component of the error is
    wrapped before multiplication; the applied input is clamped to bounds.
    """
    err = np.asarray(estimate, dtype=float) - np.asarray(nominal_state, dtype=float)
    err[2] = wrap_angle(err[2])
    correction = float(np.dot(gain, err))
    applied = min(max(nominal_input + correction, bounds[0]), bounds[1])
    return applied, correction


def propagate_tractor_nominal(state3, delta_t: float, slip: SlipParams,
                              v: float, geom: VehicleGeometry,
                              dt: float) -> np.ndarray:
    """One-step nominal prediction of the tractor subsystem."""
    return rk4_step(lambda x, u: tractor_subsystem_dynamics(x, u, slip, v, geom),
                    np.asarray(state3, dtype=float), delta_t, dt)


def propagate_trailer_nominal(state3, delta_i: float, slip: SlipParams,
                              beta: float, v: float, geom: VehicleGeometry,
                              dt: float) -> np.ndarray:
    """One-step nominal prediction of the trailer subsystem."""
    return rk4_step(
        lambda x, u: trailer_subsystem_dynamics(x, u, beta, slip, v, geom),
        np.asarray(state3, dtype=float), delta_i, dt)
