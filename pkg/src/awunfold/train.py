"""Gradient training of the controller gains through the unfolded closed loop.

The loss for one stage is the batch mean of ``int_0^t_k |x(t)|^2 dt`` under
smoothed saturation. Its gradient with respect to the flat gain vector comes
from forward sensitivity equations integrated on the same RK4 grid as the
state, see :mod:`awunfold._sensitivity`.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from . import _sensitivity
from .model import DEFAULT_ZETA, GAIN_KEYS, ControllerGains, PlantModel
from .sim import DEFAULT_STEP, DIVERGENCE_LIMIT, DivergenceError, time_grid

GRADIENT_CLIP = 1e3


@dataclass(frozen=True)
class GainLayout:
    """Packing of (A_c, B_c, C_c, D_c, E_c) into one flat vector.

    Blocks are concatenated in that order, each flattened row-major.
    """

    n_c: int
    m: int
    l: int  # noqa: E741

    @classmethod
    def for_gains(cls, gains: ControllerGains) -> GainLayout:
        return cls(gains.n_c, gains.m, gains.l)

    @property
    def shapes(self) -> dict[str, tuple[int, int]]:
        nc, m, l = self.n_c, self.m, self.l
        return {"A_c": (nc, nc), "B_c": (nc, l), "C_c": (m, nc), "D_c": (m, l), "E_c": (nc, m)}

    @property
    def offsets(self) -> dict[str, int]:
        out, k = {}, 0
        for key, (r, c) in self.shapes.items():
            out[key] = k
            k += r * c
        return out

    @property
    def size(self) -> int:
        return sum(r * c for r, c in self.shapes.values())

    def index(self, key: str, row: int, col: int) -> int:
        r, c = self.shapes[key]
        if not (0 <= row < r and 0 <= col < c):
            raise IndexError(f"({row}, {col}) outside {key} of shape {(r, c)}")
        return self.offsets[key] + row * c + col

    def locate(self, i: int) -> tuple[str, int, int]:
        """Inverse of :meth:`index`."""
        if not 0 <= i < self.size:
            raise IndexError(f"flat index {i} outside [0, {self.size})")
        for key, (r, c) in self.shapes.items():
            off = self.offsets[key]
            if i < off + r * c:
                return (key, *divmod(i - off, c))
        raise AssertionError("unreachable")

    def block_slice(self, key: str) -> slice:
        r, c = self.shapes[key]
        return slice(self.offsets[key], self.offsets[key] + r * c)

    def pack(self, gains: ControllerGains) -> np.ndarray:
        if GainLayout.for_gains(gains) != self:
            raise ValueError("gains do not match this layout")
        return np.concatenate([getattr(gains, key).ravel() for key in GAIN_KEYS])

    def unpack(self, theta) -> ControllerGains:
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (self.size,):
            raise ValueError(f"theta must have shape ({self.size},), got {theta.shape}")
        return ControllerGains(
            **{key: theta[self.block_slice(key)].reshape(shape) for key, shape in self.shapes.items()}
        )


def loss_and_gradient(plant: PlantModel, gains: ControllerGains, batch, horizon: float,
                      zeta: float = DEFAULT_ZETA, step: float = DEFAULT_STEP):
    """Batch-mean loss and its gradient with respect to the packed gains.

    Returns ``(loss, grad)`` with ``grad`` laid out by :class:`GainLayout`.
    Raises :class:`DivergenceError` tagged with the index of the first
    trajectory that blows up.
    """
    if zeta is None or not zeta > 0:
        raise ValueError("gradients are only defined for smoothed saturation (zeta > 0)")
    X0 = np.array(batch, dtype=float, ndmin=2)
    if X0.shape[0] == 0:
        raise ValueError("batch of initial states is empty")
    if X0.shape[1] != plant.n + gains.n_c:
        raise ValueError(f"initial states have dimension {X0.shape[1]}, expected {plant.n + gains.n_c}")
    if gains.m != plant.m or gains.l != plant.l:
        raise ValueError("controller dimensions do not match the plant")
    steps = np.diff(time_grid(horizon, step))
    L, G, bad, t_bad = _sensitivity.loss_and_gradient_batch(
        plant.A_p, plant.B_p, plant.C_p,
        gains.A_c, gains.B_c, gains.C_c, gains.D_c, gains.E_c,
        float(zeta), X0, steps, DIVERGENCE_LIMIT,
    )
    if bad >= 0:
        raise DivergenceError(t_bad, int(bad))
    return float(np.mean(L)), G.mean(axis=0)


@dataclass(frozen=True)
class AdamConfig:
    lr: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


@dataclass(frozen=True)
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0
    config: AdamConfig = field(default_factory=AdamConfig)

    @classmethod
    def zeros(cls, size: int, config: AdamConfig | None = None) -> AdamState:
        return cls(np.zeros(size), np.zeros(size), 0, config or AdamConfig())


def adam_step(state: AdamState, theta, grad):
    """One bias-corrected Adam update. Returns ``(new_state, new_theta)``."""
    theta = np.asarray(theta, dtype=float)
    grad = np.asarray(grad, dtype=float)
    if theta.shape != grad.shape or state.m.shape != grad.shape:
        raise ValueError(f"shape mismatch: theta {theta.shape}, grad {grad.shape}, moments {state.m.shape}")
    if not np.all(np.isfinite(grad)):
        raise FloatingPointError("non-finite gradient passed to adam_step")
    c = state.config
    t = state.t + 1
    m = c.beta1 * state.m + (1.0 - c.beta1) * grad
    v = c.beta2 * state.v + (1.0 - c.beta2) * grad * grad
    m_hat = m / (1.0 - c.beta1 ** t)
    v_hat = v / (1.0 - c.beta2 ** t)
    theta = theta - c.lr * m_hat / (np.sqrt(v_hat) + c.eps)
    return AdamState(m, v, t, c), theta


def clip_gradient(grad, max_norm: float = GRADIENT_CLIP):
    norm = float(np.linalg.norm(grad))
    if norm > max_norm:
        return grad * (max_norm / norm)
    return grad


@dataclass(frozen=True)
class StageResult:
    gains: ControllerGains
    loss_history: list[float]
    gradient_norm_history: list[float]
    failed: bool = False
    divergence: str | None = None

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["epoch", "loss", "grad_norm"])
            for i, (loss, g) in enumerate(zip(self.loss_history, self.gradient_norm_history)):
                writer.writerow([i + 1, f"{loss:.17g}", f"{g:.17g}"])


def run_stage(plant: PlantModel, gains: ControllerGains, batch, horizon: float, epochs: int = 50,
              zeta: float = DEFAULT_ZETA, step: float = DEFAULT_STEP,
              adam: AdamConfig | None = None, clip: float = GRADIENT_CLIP) -> StageResult:
    """Run ``epochs`` Adam iterations on a fixed batch.

    Histories record the loss and unclipped gradient norm at the gains
    *before* each update. If a trajectory diverges the stage stops and
    returns the last gains whose loss was finite; ``failed`` is set when
    that happens on the very first epoch.
    """
    if epochs < 1:
        raise ValueError(f"epochs must be >= 1, got {epochs}")
    layout = GainLayout.for_gains(gains)
    theta = layout.pack(gains)
    state = AdamState.zeros(layout.size, adam)
    last_finite = theta
    losses: list[float] = []
    norms: list[float] = []
    for _ in range(epochs):
        try:
            loss, grad = loss_and_gradient(plant, layout.unpack(theta), batch, horizon, zeta, step)
        except DivergenceError as err:
            return StageResult(layout.unpack(last_finite), losses, norms, failed=not losses,
                               divergence=str(err))
        last_finite = theta
        losses.append(loss)
        norms.append(float(np.linalg.norm(grad)))
        state, theta = adam_step(state, theta, clip_gradient(grad, clip))
    return StageResult(layout.unpack(theta), losses, norms)
