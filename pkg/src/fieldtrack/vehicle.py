"""Kinematic model of a steerable tractor-trailer pair.

The coupled six-state model drives both vehicle poses from one wheel speed
and two steering angles, corrected by three slip coefficients. The tractor
and trailer subsystem functions are its decentralized split; the yaw
coupling that the split drops is available separately as
``interaction_term``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

DELTA_T_MAX = math.radians(30.0)  # tractor front-wheel steering bound, rad
DELTA_I_MAX = math.radians(20.0)  # trailer steering bound, rad
SLIP_MIN = 0.25  # estimator-side lower bound on the slip coefficients
SLIP_MAX = 1.0

_ANGLE_TOL = 1e-9


def wrap_angle(angle: float) -> float:
    """Wrap an angle to [-pi, pi). Used only at metric/reporting boundaries."""
    return (angle + math.pi) % math.tau - math.pi


@dataclass(frozen=True)
class VehicleGeometry:
    """Measured lengths of the vehicle pair, in meters."""

    tractor_wheelbase: float = 1.4
    trailer_length: float = 1.3
    hitch_offset: float = 1.1
    drawbar_length: float = 0.2

    def __post_init__(self) -> None:
        for name in ("tractor_wheelbase", "trailer_length", "hitch_offset",
                     "drawbar_length"):
            if not getattr(self, name) > 0.0:
                raise ValueError(f"{name} must be strictly positive")


@dataclass
class VehicleState:
    """Pose pair plus hitch angle and longitudinal speed.

    Yaw angles are stored unwrapped so consecutive integrator steps never
    jump across the +-pi seam.
    """

    x_t: float = 0.0
    y_t: float = 0.0
    theta: float = 0.0
    x_i: float = 0.0
    y_i: float = 0.0
    psi: float = 0.0
    beta: float = 0.0
    v: float = 0.0

    def __post_init__(self) -> None:
        if self.v < 0.0:
            raise ValueError("longitudinal speed must be nonnegative")

    def as_array(self) -> np.ndarray:
        return np.array([self.x_t, self.y_t, self.theta,
                         self.x_i, self.y_i, self.psi,
                         self.beta, self.v])

    @classmethod
    def from_array(cls, arr) -> "VehicleState":
        return cls(*(float(a) for a in arr))

    def tractor3(self) -> np.ndarray:
        return np.array([self.x_t, self.y_t, self.theta])

    def trailer3(self) -> np.ndarray:
        return np.array([self.x_i, self.y_i, self.psi])


@dataclass(frozen=True)
class SlipParams:
    """Wheel-slip and side-slip coefficients, each in (0, 1]."""

    mu: float = 1.0
    kappa: float = 1.0
    eta: float = 1.0

    def __post_init__(self) -> None:
        for name in ("mu", "kappa", "eta"):
            value = getattr(self, name)
            if not 0.0 < value <= SLIP_MAX + _ANGLE_TOL:
                raise ValueError(f"slip coefficient {name}={value} outside (0, 1]")

    def as_array(self) -> np.ndarray:
        return np.array([self.mu, self.kappa, self.eta])


@dataclass(frozen=True)
class ControlInput:
    """Steering pair: tractor front wheel and trailer steering, rad."""

    delta_t: float = 0.0
    delta_i: float = 0.0

    def __post_init__(self) -> None:
        if abs(self.delta_t) > DELTA_T_MAX + _ANGLE_TOL:
            raise ValueError("tractor steering exceeds the 30 degree bound")
        if abs(self.delta_i) > DELTA_I_MAX + _ANGLE_TOL:
            raise ValueError("trailer steering exceeds the 20 degree bound")


def _full_rates(theta, psi, beta, v, delta_t, delta_i, mu, kappa, eta,
                l_t, l_i, hitch):
    """Scalar core of the coupled model; returns the six pose rates."""
    mv = mu * v
    tan_t = math.tan(kappa * delta_t)
    a = eta * delta_i + beta
    return (mv * math.cos(theta),
            mv * math.sin(theta),
            mv * tan_t / l_t,
            mv * math.cos(psi),
            mv * math.sin(psi),
            mv / l_i * (math.sin(a) - hitch / l_t * tan_t * math.cos(a)))


def full_dynamics(state: VehicleState, control: ControlInput,
                  slip: SlipParams, geom: VehicleGeometry) -> np.ndarray:
    """Time derivative of the six pose states of the coupled model.

    The hitch angle and speed are inputs here, not integrated states; their
    evolution belongs to the plant and the estimator.
    """
    return np.array(_full_rates(
        state.theta, state.psi, state.beta, state.v,
        control.delta_t, control.delta_i,
        slip.mu, slip.kappa, slip.eta,
        geom.tractor_wheelbase, geom.trailer_length, geom.hitch_offset))


def tractor_subsystem_dynamics(state3, delta_t: float, slip: SlipParams,
                               v: float, geom: VehicleGeometry) -> np.ndarray:
    """Decoupled tractor dynamics: rows one to three of the full model."""
    mv = slip.mu * v
    return np.array([mv * math.cos(state3[2]),
                     mv * math.sin(state3[2]),
                     mv * math.tan(slip.kappa * delta_t) / geom.tractor_wheelbase])


def trailer_subsystem_dynamics(state3, delta_i: float, beta: float,
                               slip: SlipParams, v: float,
                               geom: VehicleGeometry) -> np.ndarray:
    """Decoupled trailer dynamics with the tractor-steering coupling dropped."""
    mv = slip.mu * v
    return np.array([mv * math.cos(state3[2]),
                     mv * math.sin(state3[2]),
                     mv / geom.trailer_length * math.sin(slip.eta * delta_i + beta)])


def interaction_term(state: VehicleState, control: ControlInput,
                     slip: SlipParams, geom: VehicleGeometry) -> float:
    """Trailer yaw-rate coupling neglected by the decentralized split.

    Equals the full-model trailer yaw rate minus the decoupled one; zero
    whenever the tractor steering is zero.
    """
    mv = slip.mu * state.v
    tan_t = math.tan(slip.kappa * control.delta_t)
    a = slip.eta * control.delta_i + state.beta
    return -mv / geom.trailer_length * (geom.hitch_offset / geom.tractor_wheelbase) \
        * tan_t * math.cos(a)


def rk4_step(dynamics, state, control, dt: float):
    """One classical fourth-order Runge-Kutta step with zero-order-hold input.

    ``dynamics(state, control)`` must return the state derivative as an
    array of the same shape as ``state``.
    """
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    k1 = dynamics(state, control)
    k2 = dynamics(state + 0.5 * dt * k1, control)
    k3 = dynamics(state + 0.5 * dt * k2, control)
    k4 = dynamics(state + dt * k3, control)
    return state + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
