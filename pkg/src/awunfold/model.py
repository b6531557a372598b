"""Plant, controller and closed-loop representations.

The plant is a continuous-time LTI system driven through a unit saturation,

    dx_p/dt = A_p x_p + B_p sat(u),   y = C_p x_p,

and the controller is a dynamic output feedback law with an anti-windup term

    dx_c/dt = A_c x_c + B_c y + E_c (sat(u) - u),   u = C_c x_c + D_c y.

Stacking x = (x_p, x_c) gives the compact closed loop

    dx/dt = (A - B F) x + B sat(F x)

with A, B, F built by :func:`assemble_closed_loop`.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

DEFAULT_ZETA = 1e-6

PLANT_KEYS = ("A_p", "B_p", "C_p")
GAIN_KEYS = ("A_c", "B_c", "C_c", "D_c", "E_c")


def _frozen(a, name: str) -> np.ndarray:
    arr = np.array(a, dtype=float, copy=True)
    if arr.ndim == 1 and arr.size == 0:
        arr = arr.reshape(0, 0)
    if arr.ndim != 2:
        raise ValueError(f"{name} must be a 2-D matrix, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} has non-finite entries")
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class PlantModel:
    A_p: np.ndarray
    B_p: np.ndarray
    C_p: np.ndarray

    def __post_init__(self):
        for key in PLANT_KEYS:
            object.__setattr__(self, key, _frozen(getattr(self, key), key))
        n = self.A_p.shape[0]
        if self.A_p.shape != (n, n):
            raise ValueError(f"A_p must be square, got {self.A_p.shape}")
        if self.B_p.shape[0] != n:
            raise ValueError(f"B_p must have {n} rows, got {self.B_p.shape}")
        if self.C_p.shape[1] != n:
            raise ValueError(f"C_p must have {n} columns, got {self.C_p.shape}")

    @property
    def n(self) -> int:
        return self.A_p.shape[0]

    @property
    def m(self) -> int:
        return self.B_p.shape[1]

    @property
    def l(self) -> int:  # noqa: E743
        return self.C_p.shape[0]

    def to_dict(self) -> dict:
        return {key: getattr(self, key).tolist() for key in PLANT_KEYS}

    @classmethod
    def from_dict(cls, d: dict) -> PlantModel:
        return cls(*(d[key] for key in PLANT_KEYS))


@dataclass(frozen=True)
class ControllerGains:
    """The five trainable controller matrices.

    ``E_c`` is the anti-windup gain; ``E_c = 0`` recovers the plain
    dynamic controller.
    """

    A_c: np.ndarray
    B_c: np.ndarray
    C_c: np.ndarray
    D_c: np.ndarray
    E_c: np.ndarray

    def __post_init__(self):
        for key in GAIN_KEYS:
            object.__setattr__(self, key, _frozen(getattr(self, key), key))
        nc = self.A_c.shape[0]
        m, l = self.D_c.shape
        expected = {
            "A_c": (nc, nc),
            "B_c": (nc, l),
            "C_c": (m, nc),
            "E_c": (nc, m),
        }
        for key, shape in expected.items():
            if getattr(self, key).shape != shape:
                raise ValueError(
                    f"{key} has shape {getattr(self, key).shape}, expected {shape} "
                    f"(n_c={nc}, m={m}, l={l})"
                )

    @property
    def n_c(self) -> int:
        return self.A_c.shape[0]

    @property
    def m(self) -> int:
        return self.D_c.shape[0]

    @property
    def l(self) -> int:  # noqa: E743
        return self.D_c.shape[1]

    @classmethod
    def zeros(cls, n_c: int, m: int, l: int) -> ControllerGains:  # noqa: E741
        return cls(
            np.zeros((n_c, n_c)),
            np.zeros((n_c, l)),
            np.zeros((m, n_c)),
            np.zeros((m, l)),
            np.zeros((n_c, m)),
        )

    def replace(self, **changes) -> ControllerGains:
        values = {key: getattr(self, key) for key in GAIN_KEYS}
        values.update(changes)
        return ControllerGains(**values)

    def without_antiwindup(self) -> ControllerGains:
        return self.replace(E_c=np.zeros_like(self.E_c))

    def to_dict(self) -> dict:
        return {key: getattr(self, key).tolist() for key in GAIN_KEYS}

    @classmethod
    def from_dict(cls, d: dict) -> ControllerGains:
        return cls(*(d[key] for key in GAIN_KEYS))


@dataclass(frozen=True)
class ClosedLoopSystem:
    A: np.ndarray
    B: np.ndarray
    F: np.ndarray
    n: int
    n_c: int
    m: int
    A_cl: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        for key in ("A", "B", "F"):
            object.__setattr__(self, key, _frozen(getattr(self, key), key))
        N = self.n + self.n_c
        if self.A.shape != (N, N) or self.B.shape != (N, self.m) or self.F.shape != (self.m, N):
            raise ValueError(
                f"inconsistent closed-loop shapes A{self.A.shape} B{self.B.shape} F{self.F.shape}"
            )
        A_cl = self.A - self.B @ self.F
        A_cl.flags.writeable = False
        object.__setattr__(self, "A_cl", A_cl)

    @property
    def dim(self) -> int:
        return self.n + self.n_c


def assemble_closed_loop(plant: PlantModel, gains: ControllerGains) -> ClosedLoopSystem:
    """Build (A, B, F) of the compact closed loop from plant and controller."""
    if gains.m != plant.m:
        raise ValueError(
            f"D_c has {gains.m} rows but B_p has {plant.m} inputs (C_c/D_c/E_c block mismatch)"
        )
    if gains.l != plant.l:
        raise ValueError(
            f"D_c/B_c expect {gains.l} outputs but C_p has {plant.l} rows (B_c/D_c block mismatch)"
        )
    Ap, Bp, Cp = plant.A_p, plant.B_p, plant.C_p
    Ac, Bc, Cc, Dc, Ec = gains.A_c, gains.B_c, gains.C_c, gains.D_c, gains.E_c
    A = np.block([[Ap + Bp @ Dc @ Cp, Bp @ Cc], [Bc @ Cp, Ac]])
    B = np.vstack([Bp, Ec])
    F = np.hstack([Dc @ Cp, Cc])
    return ClosedLoopSystem(A, B, F, plant.n, gains.n_c, plant.m)


def saturate(u):
    """Unit saturation sign(u) * min(1, |u|), component-wise."""
    return np.clip(u, -1.0, 1.0)


def smooth_saturate(u, zeta: float = DEFAULT_ZETA):
    """Smooth surrogate (sqrt(zeta + (u+1)^2) - sqrt(zeta + (u-1)^2)) / 2."""
    if zeta <= 0:
        raise ValueError(f"zeta must be positive, got {zeta}")
    u = np.asarray(u, dtype=float)
    return 0.5 * (np.sqrt(zeta + (u + 1.0) ** 2) - np.sqrt(zeta + (u - 1.0) ** 2))


def smooth_saturate_derivative(u, zeta: float = DEFAULT_ZETA):
    if zeta <= 0:
        raise ValueError(f"zeta must be positive, got {zeta}")
    u = np.asarray(u, dtype=float)
    return 0.5 * (
        (u + 1.0) / np.sqrt(zeta + (u + 1.0) ** 2) - (u - 1.0) / np.sqrt(zeta + (u - 1.0) ** 2)
    )


def saturation_function(zeta: float | None):
    """Exact saturation for ``zeta=None``, otherwise the smooth surrogate."""
    if zeta is None:
        return saturate
    if zeta <= 0:
        raise ValueError(f"zeta must be positive, got {zeta}")
    return lambda u: smooth_saturate(u, zeta)


def closed_loop_rhs(sys: ClosedLoopSystem, x, zeta: float | None = None) -> np.ndarray:
    """Vector field (A - BF) x + B sat(F x).

    ``x`` may be a single state or a stack of states along the first axis.
    ``zeta=None`` uses exact saturation.
    """
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != sys.dim:
        raise ValueError(f"state has dimension {x.shape[-1]}, expected {sys.dim}")
    sat = saturation_function(zeta)
    return x @ sys.A_cl.T + sat(x @ sys.F.T) @ sys.B.T


# -- serialization ---------------------------------------------------------


def save_json(obj: dict, path) -> None:
    Path(path).write_text(json.dumps(obj, indent=2) + "\n")


def load_gains(path) -> ControllerGains:
    return ControllerGains.from_dict(json.loads(Path(path).read_text()))


def save_gains(gains: ControllerGains, path) -> None:
    save_json(gains.to_dict(), path)


def gains_hash(gains: ControllerGains) -> str:
    """SHA-256 of the canonical JSON encoding of the gains."""
    text = json.dumps(gains.to_dict(), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode()).hexdigest()
