"""Moving-horizon estimation of vehicle states and slip coefficients.

The estimator fits the eight states (pose pair, hitch angle, speed) and the
three slip coefficients to a sliding window of noisy measurements, subject
to the coupled kinematic model with hitch angle and speed treated as random
walks. Measured steering enters as penalized input variables rather than
hard inputs. The window's discarded history is summarized by a quadratic
arrival cost whose weight follows an EKF-style information recursion
downweighted by a process-noise term.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .rti import OcpProblem, OcpSolution, RtiSolver, reference_warm_start, shift_warm_start
from .vehicle import (DELTA_I_MAX, DELTA_T_MAX, SLIP_MAX, SLIP_MIN,
                      SlipParams, VehicleGeometry, VehicleState, _full_rates,
                      rk4_step)

# Measurement standard deviations, ordered as
# (x_t, y_t, x_i, y_i, beta, v, delta_t, delta_i); the fit weights are
# their inverses.
MEASUREMENT_SIGMAS = np.array([0.03, 0.03, 0.03, 0.03, 0.0175, 0.1, 0.0175, 0.0175])
H_WEIGHTS = 1.0 / MEASUREMENT_SIGMAS

# Process-noise standard deviations for the arrival-cost downweighting,
# ordered as the estimator state (x_t, y_t, theta, x_i, y_i, psi, beta, v).
D_UPDATE_STATE = np.array([10.0, 10.0, 0.1, 10.0, 10.0, 0.1, 0.1745, 0.1])
# Slip coefficients random-walk slowly; their per-step standard deviation
# must stay well below the per-window estimation noise or the estimates
# chase it across the feasible interval.
DEFAULT_PARAM_PROCESS_STD = 0.005

_STATE_MEAS_IDX = (0, 1, 3, 4, 6, 7)  # state components that are measured


@dataclass
class MeasurementSample:
    """One synchronous measurement set with its timestamp."""

    t: float
    x_t: float
    y_t: float
    x_i: float
    y_i: float
    beta: float
    v: float
    delta_t: float
    delta_i: float

    def vector(self) -> np.ndarray:
        return np.array([self.x_t, self.y_t, self.x_i, self.y_i,
                         self.beta, self.v, self.delta_t, self.delta_i])


class MeasurementBuffer:
    """FIFO window of measurement samples with strictly increasing timestamps."""

    def __init__(self, maxlen: int):
        if maxlen < 2:
            raise ValueError("window must hold at least two samples")
        self.maxlen = maxlen
        self._samples: list[MeasurementSample] = []

    def __len__(self) -> int:
        return len(self._samples)

    def __getitem__(self, i: int) -> MeasurementSample:
        return self._samples[i]

    @property
    def full(self) -> bool:
        return len(self._samples) == self.maxlen

    def push(self, sample: MeasurementSample) -> MeasurementSample | None:
        """Append a sample, returning the evicted one if the window slid."""
        if not np.isfinite(sample.vector()).all() or not math.isfinite(sample.t):
            raise ValueError("measurement sample contains non-finite values")
        if self._samples and sample.t <= self._samples[-1].t:
            raise ValueError(
                f"out-of-order timestamp {sample.t} (last {self._samples[-1].t})")
        evicted = None
        if len(self._samples) == self.maxlen:
            evicted = self._samples.pop(0)
        self._samples.append(sample)
        return evicted

    def measurement_matrix(self) -> np.ndarray:
        return np.vstack([s.vector() for s in self._samples])


@dataclass
class ArrivalCost:
    """Quadratic prior on the window-start state and the parameters."""

    reference: np.ndarray  # (11,) of state then parameters
    weight: np.ndarray  # (11, 11) information matrix

    def validate(self) -> None:
        w = self.weight
        if not np.allclose(w, w.T, atol=1e-9):
            raise ValueError("arrival weight must be symmetric")
        if float(np.min(np.linalg.eigvalsh(w))) <= 0.0:
            raise ValueError("arrival weight must be positive definite")


class ArrivalUpdateError(RuntimeError):
    pass


def ekf_information_update(P: np.ndarray, transition: np.ndarray,
                           meas_jacobian: np.ndarray, meas_weight: np.ndarray,
                           process_std: np.ndarray) -> np.ndarray:
    """One absorb-and-propagate step of the arrival-cost information matrix.

    The departing node's measurement information is absorbed into the prior,
    the covariance is pushed through the linearized transition, inflated by
    the squared process-noise standard deviations, and inverted back to an
    information matrix. On a linear-Gaussian system this reproduces the
    posterior information of a Kalman filter.
    """
    info = P + meas_jacobian.T @ meas_weight @ meas_jacobian
    try:
        cov = np.linalg.inv(info)
        cov_pred = transition @ cov @ transition.T + np.diag(np.square(process_std))
        new_p = np.linalg.inv(cov_pred)
    except np.linalg.LinAlgError as exc:
        raise ArrivalUpdateError(str(exc)) from exc
    new_p = 0.5 * (new_p + new_p.T)
    eigs = np.linalg.eigvalsh(new_p)
    if float(eigs[0]) <= 0.0:
        raise ArrivalUpdateError("arrival weight lost positive definiteness")
    return new_p


@dataclass
class EstimatorOutput:
    state: VehicleState
    slip: SlipParams
    solve_time: float = 0.0
    kkt_residual: float = float("nan")
    arrival_resets: int = 0


class MovingHorizonEstimator:
    """Sliding-window state and parameter estimator on the coupled model."""

    def __init__(self, geom: VehicleGeometry, initial_state: VehicleState,
                 horizon: int = 20, dt: float = 0.2,
                 initial_slip: float = 0.7, prior_information: float = 100.0,
                 param_prior_information: float = 10.0,
                 param_process_std: float = DEFAULT_PARAM_PROCESS_STD):
        self.geom = geom
        self.dt = dt
        self.horizon = horizon
        self.param_process_std = param_process_std
        self.buffer = MeasurementBuffer(horizon)
        self._initial_state = initial_state
        p0 = np.clip(initial_slip, SLIP_MIN, SLIP_MAX)
        self._initial_params = np.full(3, p0)
        self._p0_information = np.diag(
            [prior_information] * 8 + [param_prior_information] * 3)
        self.arrival = ArrivalCost(
            np.concatenate([initial_state.as_array(), self._initial_params]),
            self._p0_information.copy())
        self.arrival_resets = 0
        self._y: np.ndarray | None = None
        self._solver: RtiSolver | None = None
        self._solution: OcpSolution | None = None
        self._first_node_jac: tuple[np.ndarray, np.ndarray] | None = None

    # -- model ---------------------------------------------------------------

    def _rates(self, x: np.ndarray, u: np.ndarray, p: np.ndarray) -> np.ndarray:
        # The hitch angle follows the yaw-rate difference, as in the plant;
        # modeling it (rather than a free random walk) stops the hitch-angle
        # estimate from absorbing trailer side-slip errors. Speed stays a
        # random walk absorbed by the arrival-cost process noise.
        g = self.geom
        r = _full_rates(x[2], x[5], x[6], x[7], u[0], u[1], p[0], p[1], p[2],
                        g.tractor_wheelbase, g.trailer_length, g.hitch_offset)
        return np.array([r[0], r[1], r[2], r[3], r[4], r[5], r[2] - r[5], 0.0])

    def _dynamics(self, x: np.ndarray, u: np.ndarray, p: np.ndarray) -> np.ndarray:
        return rk4_step(lambda xs, us: self._rates(xs, us, p), x, u, self.dt)

    def _stage_residual(self, k: int, x, u, p) -> np.ndarray:
        y = self._y[k]
        return np.array([x[0] - y[0], x[1] - y[1], x[3] - y[2], x[4] - y[3],
                         x[6] - y[4], x[7] - y[5], u[0] - y[6], u[1] - y[7]])

    def _terminal_residual(self, x, p) -> np.ndarray:
        y = self._y[-1]
        return np.array([x[0] - y[0], x[1] - y[1], x[3] - y[2], x[4] - y[3],
                         x[6] - y[4], x[7] - y[5]])

    def _build_problem(self, n: int) -> OcpProblem:
        return OcpProblem(
            horizon=n, n_x=8, n_u=2, n_p=3,
            dynamics=self._dynamics,
            stage_residual=self._stage_residual,
            stage_weight=np.diag(H_WEIGHTS),
            terminal_residual=self._terminal_residual,
            terminal_weight=np.diag(H_WEIGHTS[:6]),
            u_lower=np.array([-DELTA_T_MAX, -DELTA_I_MAX]),
            u_upper=np.array([DELTA_T_MAX, DELTA_I_MAX]),
            p_lower=np.full(3, SLIP_MIN),
            p_upper=np.full(3, SLIP_MAX),
            free_initial_state=True,
            arrival_ref=self.arrival.reference,
            arrival_weight=self.arrival.weight,
        )

    # -- window bookkeeping ----------------------------------------------------

    def _seed_state(self, sample: MeasurementSample, template: np.ndarray) -> np.ndarray:
        x = template.copy()
        x[0], x[1] = sample.x_t, sample.y_t
        x[3], x[4] = sample.x_i, sample.y_i
        x[6], x[7] = sample.beta, sample.v
        return x

    def _extend_warm(self) -> OcpSolution:
        # The appended interval runs from the old terminal node, so it takes
        # that node's measured steering as its input guess.
        sol = self._solution
        node_sample = self.buffer[len(self.buffer) - 2]
        u_new = np.array([node_sample.delta_t, node_sample.delta_i])
        new_state = self._dynamics(sol.states[-1], u_new, sol.params)
        states = np.vstack([sol.states, new_state])
        inputs = np.vstack([sol.inputs, u_new[None, :]]) \
            if sol.inputs.size else u_new[None, :]
        return OcpSolution(states, inputs, sol.params.copy())

    def update(self, sample: MeasurementSample) -> EstimatorOutput:
        """Push a measurement and run one estimation iteration."""
        was_full = self.buffer.full
        evicted = self.buffer.push(sample)
        if len(self.buffer) < 2:
            seed = self._seed_state(sample, self._initial_state.as_array())
            state = VehicleState.from_array(np.append(seed[:7], max(seed[7], 0.0)))
            slip = SlipParams(*np.clip(self._initial_params, SLIP_MIN, SLIP_MAX))
            return EstimatorOutput(state, slip, arrival_resets=self.arrival_resets)

        t0 = time.perf_counter()
        if evicted is not None:
            self._slide_arrival()
        self._y = self.buffer.measurement_matrix()
        n = len(self.buffer) - 1

        if self._solver is None or self._solver.problem.horizon != n:
            problem = self._build_problem(n)
            self._solver = RtiSolver(problem)
        else:
            problem = self._solver.problem
        problem.arrival_ref = self.arrival.reference
        problem.arrival_weight = self.arrival.weight

        warm = self._warm_start(was_full)
        prepared = self._solver.prepare(warm)
        self._first_node_jac = (prepared.A[0].copy(), prepared.C[0].copy())
        sol = self._solver.feedback()
        self._solution = sol

        params = np.clip(sol.params, SLIP_MIN, SLIP_MAX)
        assert np.all(sol.params >= SLIP_MIN - 1e-9) and np.all(sol.params <= SLIP_MAX + 1e-9)
        xe = sol.states[-1]
        state = VehicleState.from_array(np.append(xe[:7], max(xe[7], 0.0)))
        return EstimatorOutput(state, SlipParams(*params),
                               solve_time=time.perf_counter() - t0,
                               kkt_residual=sol.kkt_residual,
                               arrival_resets=self.arrival_resets)

    def _warm_start(self, was_full: bool) -> OcpSolution:
        if self._solution is None:
            samples = [self.buffer[i] for i in range(len(self.buffer))]
            states = np.vstack([
                self._seed_state(s, self._initial_state.as_array()) for s in samples])
            inputs = np.array([[s.delta_t, s.delta_i] for s in samples[:-1]])
            return OcpSolution(states, inputs, self._initial_params.copy())
        if was_full:
            return shift_warm_start(self._solution)
        return self._extend_warm()

    def _slide_arrival(self) -> None:
        """EKF-style information update when the window drops its oldest node."""
        if self._solution is None or self._first_node_jac is None:
            return
        A0, C0 = self._first_node_jac
        transition = np.block([[A0, C0], [np.zeros((3, 8)), np.eye(3)]])
        meas_jac = np.zeros((6, 11))
        for row, idx in enumerate(_STATE_MEAS_IDX):
            meas_jac[row, idx] = 1.0
        process_std = np.concatenate(
            [D_UPDATE_STATE, np.full(3, self.param_process_std)])
        try:
            new_weight = ekf_information_update(
                self.arrival.weight, transition, meas_jac,
                np.diag(H_WEIGHTS[:6]), process_std)
            self.arrival = ArrivalCost(
                np.concatenate([self._solution.states[1], self._solution.params]),
                new_weight)
        except ArrivalUpdateError:
            self.arrival_resets += 1
            self.arrival = ArrivalCost(
                np.concatenate([self._solution.states[1], self._solution.params]),
                self._p0_information.copy())
