"""Joint design of dynamic output feedback and anti-windup gains.

Gains are trained by gradient descent through an RK4-unfolded simulation of
the saturated closed loop and each candidate is certified by an LMI-based
contractively invariant ellipsoid.
"""

from .model import (
    ClosedLoopSystem,
    ControllerGains,
    PlantModel,
    assemble_closed_loop,
    closed_loop_rhs,
    saturate,
    smooth_saturate,
    smooth_saturate_derivative,
)

__version__ = "0.1.0"

__all__ = [
    "ClosedLoopSystem",
    "ControllerGains",
    "PlantModel",
    "assemble_closed_loop",
    "closed_loop_rhs",
    "saturate",
    "smooth_saturate",
    "smooth_saturate_derivative",
]
