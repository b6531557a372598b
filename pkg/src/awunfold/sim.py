"""Fixed-step RK4 simulation of the saturated closed loop.

The trajectory energy ``int_0^t |x(s)|^2 ds`` is integrated as one extra
state alongside ``x`` so it carries the same order of accuracy as the state
and matches the value used for training.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .model import ClosedLoopSystem, closed_loop_rhs

DIVERGENCE_LIMIT = 1e12
DEFAULT_STEP = 1e-2


class DivergenceError(RuntimeError):
    """Raised when a simulated state leaves the finite region.

    ``time`` is the grid time at which the blow-up was detected and
    ``index`` the position of the offending initial state in a batch.
    """

    def __init__(self, time: float, index: int | None = None):
        self.time = float(time)
        self.index = index
        where = "" if index is None else f" (initial state #{index})"
        super().__init__(f"trajectory diverged at t={self.time:.6g}{where}")


@dataclass(frozen=True)
class Trajectory:
    times: np.ndarray
    states: np.ndarray  # (K+1, N)
    inputs: np.ndarray  # (K+1, m), unsaturated u = F x
    running_loss: np.ndarray  # (K+1,)

    @property
    def final_state(self) -> np.ndarray:
        return self.states[-1]

    @property
    def loss(self) -> float:
        return float(self.running_loss[-1])

    def to_csv(self, path) -> None:
        """Write ``t,x1..xN,u1..um,loss`` rows with 17 significant digits."""
        N = self.states.shape[1]
        m = self.inputs.shape[1]
        header = ["t", *(f"x{i + 1}" for i in range(N)), *(f"u{i + 1}" for i in range(m)), "loss"]
        rows = np.column_stack([self.times, self.states, self.inputs, self.running_loss])
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(header)
            for row in rows:
                writer.writerow([f"{v:.17g}" for v in row])


@dataclass(frozen=True)
class LossSpec:
    horizon: float
    zeta: float | None = None  # None: exact saturation

    def __post_init__(self):
        if not self.horizon > 0:
            raise ValueError(f"horizon must be positive, got {self.horizon}")
        if self.zeta is not None and not self.zeta > 0:
            raise ValueError(f"zeta must be positive, got {self.zeta}")


def time_grid(horizon: float, step: float) -> np.ndarray:
    """Uniform grid 0, step, 2 step, ... ending exactly at ``horizon``.

    A final partial step is used when ``horizon`` is not a multiple of
    ``step``; remainders below 1e-9 step are absorbed into the last full step.
    """
    if not step > 0:
        raise ValueError(f"step must be positive, got {step}")
    if not horizon > 0:
        raise ValueError(f"horizon must be positive, got {horizon}")
    ratio = horizon / step
    k = int(np.floor(ratio + 1e-9))
    grid = step * np.arange(k + 1, dtype=float)
    if ratio - k > 1e-9:
        grid = np.append(grid, horizon)
    else:
        grid[-1] = horizon
    return grid


def integrate_batch(sys: ClosedLoopSystem, x0, horizon: float, step: float = DEFAULT_STEP,
                    zeta: float | None = None, record: bool = True):
    """RK4 integration of a stack of initial states ``x0`` of shape (J, N).

    Returns ``(times, states, losses)`` where ``states`` has shape
    (K+1, J, N) and ``losses`` (K+1, J) when ``record`` is true, otherwise
    only the final slices (J, N) and (J,).
    """
    X = np.array(x0, dtype=float, ndmin=2)
    if X.shape[1] != sys.dim:
        raise ValueError(f"initial states have dimension {X.shape[1]}, expected {sys.dim}")
    times = time_grid(horizon, step)

    def f(X):
        return closed_loop_rhs(sys, X, zeta)

    L = np.zeros(X.shape[0])
    if record:
        states = np.empty((len(times), *X.shape))
        losses = np.empty((len(times), X.shape[0]))
        states[0] = X
        losses[0] = L
    for k, h in enumerate(np.diff(times)):
        k1 = f(X)
        X2 = X + 0.5 * h * k1
        k2 = f(X2)
        X3 = X + 0.5 * h * k2
        k3 = f(X3)
        X4 = X + h * k3
        k4 = f(X4)
        q = (X * X).sum(1) + 2.0 * (X2 * X2).sum(1) + 2.0 * (X3 * X3).sum(1) + (X4 * X4).sum(1)
        X = X + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        L = L + (h / 6.0) * q
        bad = ~np.all(np.isfinite(X) & (np.abs(X) <= DIVERGENCE_LIMIT), axis=1)
        if bad.any():
            raise DivergenceError(times[k + 1], int(np.flatnonzero(bad)[0]))
        if record:
            states[k + 1] = X
            losses[k + 1] = L
    if record:
        return times, states, losses
    return times, X, L


def integrate(sys: ClosedLoopSystem, x0, horizon: float, step: float = DEFAULT_STEP,
              zeta: float | None = None) -> Trajectory:
    """Simulate one trajectory; ``zeta=None`` uses exact saturation."""
    x0 = np.asarray(x0, dtype=float)
    if x0.shape != (sys.dim,):
        raise ValueError(f"x0 must have shape ({sys.dim},), got {x0.shape}")
    try:
        times, states, losses = integrate_batch(sys, x0[None], horizon, step, zeta)
    except DivergenceError as err:
        raise DivergenceError(err.time) from None
    states = states[:, 0]
    return Trajectory(times, states, states @ sys.F.T, losses[:, 0])


def batch_loss(sys: ClosedLoopSystem, initial_states, spec: LossSpec,
               step: float = DEFAULT_STEP) -> float:
    """Monte-Carlo estimate of E[int_0^T |x|^2 dt] over ``initial_states``."""
    X0 = np.array(initial_states, dtype=float, ndmin=2)
    if X0.shape[0] == 0:
        raise ValueError("batch of initial states is empty")
    _, _, L = integrate_batch(sys, X0, spec.horizon, step, spec.zeta, record=False)
    return float(np.mean(L))


def lyapunov_value(P, x, tol: float = 1e-9):
    """Quadratic form x^T P x; ``x`` may be a stack of states."""
    P = np.asarray(P, dtype=float)
    if np.max(np.abs(P - P.T), initial=0.0) > tol:
        raise ValueError("P is not symmetric")
    x = np.asarray(x, dtype=float)
    return np.einsum("...i,ij,...j->...", x, P, x)
