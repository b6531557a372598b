"""Reference plant and controllers for the two-input unstable benchmark.

The plant has one unstable mode (eigenvalue 0.1) and full state measurement.
"""

import numpy as np

from .model import ControllerGains, PlantModel


def benchmark_plant() -> PlantModel:
    return PlantModel(
        A_p=[[0.1, 0.0], [0.0, -0.1]],
        B_p=[[1.5, 4.0], [1.2, 3.0]],
        C_p=np.eye(2),
    )


def initial_controller() -> ControllerGains:
    """Controller designed for the unsaturated loop, no anti-windup term."""
    return ControllerGains(
        A_c=np.zeros((2, 2)),
        B_c=-np.eye(2),
        C_c=[[0.3333, 0.0], [0.0, -0.1]],
        D_c=[[-3.3333, 0.0], [0.0, 1.0]],
        E_c=np.zeros((2, 2)),
    )


def learned_controller() -> ControllerGains:
    """Published outcome of the unfolded training (best stage, k = 17)."""
    return ControllerGains(
        A_c=[[-0.9134, 0.5888], [-0.4153, -1.5813]],
        B_c=[[-1.2601, -0.2081], [0.3309, -0.6955]],
        C_c=[[-0.1852, 0.6730], [0.2955, -0.4372]],
        D_c=[[-3.9034, -0.3487], [-0.8045, 0.2136]],
        E_c=[[-0.0195, 1.5041], [0.4874, -1.3736]],
    )


# Shape reference vertices in the plant coordinates; controller states are 0.
REFERENCE_VERTICES = [(0.6, 0.4)]
WIDE_REFERENCE_VERTICES = [(1.0, 1.0), (1.0, -1.0)]

LEARNED_ALPHA = 82.858

# Sizes reported for conventional anti-windup designs. They come from a
# different optimization problem and are for comparison printouts only.
BASELINE_ALPHAS = {
    "sector-condition AW, |E_c|^2 <= 100": 36.6119,
    "sector-condition AW, unconstrained": 71.72,
    "iterative LMI AW, |E_c|^2 <= 10000": 40.4398,
    "iterative LMI AW, wide reference set": 8.4737,
}

# Boundary initial condition used for the state-response plot.
BOUNDARY_STATE = (-43.48, -66.78, 0.0, 0.0)
