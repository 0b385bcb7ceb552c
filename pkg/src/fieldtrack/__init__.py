"""Closed-loop tractor-trailer trajectory tracking.

Library pieces: kinematic vehicle model, space-based reference paths, a
real-time-iteration Gauss-Newton solver, moving-horizon estimation,
decentralized tube NMPC with a centralized baseline, a simulation harness,
and error/timing reporting. The `fieldtrack` CLI drives scenarios end to
end.
"""

__version__ = "0.1.0"

from .vehicle import (ControlInput, SlipParams, VehicleGeometry, VehicleState,
                      full_dynamics, interaction_term, rk4_step,
                      tractor_subsystem_dynamics, trailer_subsystem_dynamics)

__all__ = [
    "__version__",
    "ControlInput",
    "SlipParams",
    "VehicleGeometry",
    "VehicleState",
    "full_dynamics",
    "interaction_term",
    "rk4_step",
    "tractor_subsystem_dynamics",
    "trailer_subsystem_dynamics",
]
