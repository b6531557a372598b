"""Incremental design loop: certify, sample, train, re-certify, keep the best.

1. Certify the initial controller with E_c = 0, giving alpha_0 and P_0.
2. For k = 1..N draw J initial states uniformly from the shell
   beta * Omega(P_0) minus Omega(P_0), train on the horizon t_k = k T / N
   starting from the previous stage's gains, and certify the result.
3. Return the gains with the largest certified alpha (alpha_0 included).
"""

from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .certify import (
    DEFAULT_EPS,
    CertificationError,
    CertifiedEllipsoid,
    InfeasibleError,
    ShapeRefSet,
    SolverOptions,
    certify,
    verify_certificate,
)
from .model import DEFAULT_ZETA, ControllerGains, PlantModel, assemble_closed_loop, gains_hash
from .sim import DEFAULT_STEP, DivergenceError, integrate
from .train import AdamConfig, StageResult, run_stage

log = logging.getLogger(__name__)

MIN_ACCEPTANCE = 1e-4

# Sign patterns on the plant state for the first and third quadrants.
FIRST_THIRD_QUADRANTS = ((1, 1), (-1, -1))


class SamplingError(RuntimeError):
    pass


class DesignInfeasibleError(InfeasibleError):
    """The initial controller cannot be certified; pick a different one."""


@dataclass(frozen=True)
class DesignConfig:
    T: float = 20.0
    N: int = 20
    J: int = 10
    beta: float = 10.0
    zeta: float = DEFAULT_ZETA
    lr: float = 0.01
    epochs: int = 50
    seed: int = 0
    quadrant_mask: tuple[tuple[int, ...], ...] | None = None
    step: float = DEFAULT_STEP
    sample_controller_states: bool = False
    eps: float = DEFAULT_EPS

    def __post_init__(self):
        if not self.T > 0:
            raise ValueError("T must be positive")
        if self.N < 1 or self.J < 1 or self.epochs < 1:
            raise ValueError("N, J and epochs must be at least 1")
        if not self.beta > 1:
            raise ValueError("beta must exceed 1")
        if not self.zeta > 0:
            raise ValueError("zeta must be positive")
        if not self.lr > 0 or not self.step > 0 or not self.eps > 0:
            raise ValueError("lr, step and eps must be positive")
        if self.quadrant_mask is not None:
            mask = tuple(tuple(int(s) for s in pattern) for pattern in self.quadrant_mask)
            if not mask or any(s not in (-1, 1) for pattern in mask for s in pattern):
                raise ValueError("quadrant_mask patterns must be non-empty sequences of +1/-1")
            object.__setattr__(self, "quadrant_mask", mask)

    def horizons(self) -> list[float]:
        return [k * self.T / self.N for k in range(1, self.N + 1)]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["quadrant_mask"] = None if self.quadrant_mask is None else [list(p) for p in self.quadrant_mask]
        return d


def _matches_mask(xp: np.ndarray, mask) -> np.ndarray:
    """Row-wise test of plant-state sign patterns; zero matches either sign."""
    if mask is None:
        return np.ones(len(xp), dtype=bool)
    ok = np.zeros(len(xp), dtype=bool)
    for pattern in mask:
        pattern = np.asarray(pattern, dtype=float)
        if pattern.shape[0] != xp.shape[1]:
            raise ValueError(f"mask pattern {tuple(pattern)} does not match plant dimension {xp.shape[1]}")
        ok |= np.all(xp * pattern >= 0, axis=1)
    return ok


def sample_shell(cert0: CertifiedEllipsoid, beta: float, count: int, n_plant: int,
                 quadrant_mask=None, rng: np.random.Generator | None = None,
                 sample_controller_states: bool = False, chunk: int = 10_000) -> np.ndarray:
    """Uniform samples from {x : 1 < x^T P_0 x <= beta^2}.

    Candidates are drawn uniformly in the outer ellipsoid by mapping
    uniform-ball samples through the inverse Cholesky factor, then points
    inside the unit ellipsoid or outside the allowed sign patterns of the
    plant state are rejected. By default the controller coordinates are held
    at zero, so sampling happens on the plant-coordinate section of the
    ellipsoid (whose quadratic form is the leading block of P_0).
    """
    if not beta > 1:
        raise ValueError("beta must exceed 1")
    rng = rng if rng is not None else np.random.default_rng()
    P = np.asarray(cert0.P, dtype=float)
    N = P.shape[0]
    d = N if sample_controller_states else n_plant
    P_sec = P[:d, :d]
    L = np.linalg.cholesky(P_sec)
    out: list[np.ndarray] = []
    accepted = attempts = 0
    while accepted < count:
        z = rng.standard_normal((chunk, d))
        z /= np.linalg.norm(z, axis=1, keepdims=True)
        r = beta * rng.random(chunk) ** (1.0 / d)
        w = z * r[:, None]
        # x^T P_sec x = |w|^2 for x = L^{-T} w
        x = np.linalg.solve(L.T, w.T).T
        q = np.einsum("ki,ij,kj->k", x, P_sec, x)
        keep = (q > 1.0) & (q <= beta ** 2) & _matches_mask(x[:, :n_plant], quadrant_mask)
        attempts += chunk
        accepted += int(keep.sum())
        out.append(x[keep])
        if attempts >= 100_000 and accepted < MIN_ACCEPTANCE * attempts:
            raise SamplingError(
                f"shell acceptance rate {accepted / attempts:.2e} below {MIN_ACCEPTANCE:g}; "
                "quadrant mask and shell are incompatible"
            )
    samples = np.concatenate(out)[:count]
    if d < N:
        samples = np.hstack([samples, np.zeros((count, N - d))])
    return samples


@dataclass
class StageRecord:
    k: int
    horizon: float
    gains: ControllerGains
    alpha: float | None
    loss_history: list[float]
    gradient_norm_history: list[float]
    start_hash: str
    end_hash: str
    certificate: CertifiedEllipsoid | None = None
    verification: dict | None = None
    status: str = "ok"
    incumbent: bool = False
    alpha_max: float = 0.0
    batch: np.ndarray | None = None

    def to_dict(self) -> dict:
        return {
            "k": self.k,
            "horizon": self.horizon,
            "alpha": self.alpha,
            "alpha_max": self.alpha_max,
            "incumbent": self.incumbent,
            "status": self.status,
            "gains": self.gains.to_dict(),
            "start_hash": self.start_hash,
            "end_hash": self.end_hash,
            "loss_history": list(self.loss_history),
            "gradient_norm_history": list(self.gradient_norm_history),
            "certificate": None if self.certificate is None else self.certificate.to_dict(),
            "verification": self.verification,
        }


@dataclass
class DesignReport:
    config: DesignConfig
    alpha0: float
    certificate0: CertifiedEllipsoid
    initial_gains: ControllerGains
    stages: list[StageRecord] = field(default_factory=list)
    best_stage: int = 0
    best_gains: ControllerGains | None = None
    best_certificate: CertifiedEllipsoid | None = None
    elapsed: float = 0.0

    @property
    def alpha_max(self) -> float:
        return self.best_certificate.alpha

    @property
    def incumbent_history(self) -> list[float]:
        return [self.alpha0] + [s.alpha_max for s in self.stages]

    def to_dict(self) -> dict:
        return {
            "schema_version": 1,
            "config": self.config.to_dict(),
            "alpha0": self.alpha0,
            "alpha_max": self.alpha_max,
            "best_stage": self.best_stage,
            "initial_gains": self.initial_gains.to_dict(),
            "best_gains": self.best_gains.to_dict(),
            "best_gains_hash": gains_hash(self.best_gains),
            "certificate0": self.certificate0.to_dict(),
            "best_certificate": self.best_certificate.to_dict(),
            "stages": [s.to_dict() for s in self.stages],
            "elapsed_seconds": self.elapsed,
        }


def run_design(plant: PlantModel, gains0: ControllerGains, ref: ShapeRefSet, cfg: DesignConfig,
               options: SolverOptions | None = None, on_stage=None) -> DesignReport:
    """Run the full incremental design and return the best certified gains.

    ``on_stage`` is called with each finished :class:`StageRecord`.
    """
    started = time.perf_counter()
    rng = np.random.default_rng(cfg.seed)
    gains0 = gains0.without_antiwindup()
    sys0 = assemble_closed_loop(plant, gains0)
    try:
        cert0 = certify(sys0, ref, cfg.eps, options)
    except CertificationError as err:
        raise DesignInfeasibleError(
            f"initial controller cannot be certified ({err}); choose a different initial controller"
        ) from err
    log.info("stage 0: alpha_0 = %.6g", cert0.alpha)
    report = DesignReport(cfg, cert0.alpha, cert0, gains0, best_gains=gains0, best_certificate=cert0)
    adam = AdamConfig(lr=cfg.lr)
    gains = gains0
    for k, horizon in enumerate(cfg.horizons(), start=1):
        batch = sample_shell(cert0, cfg.beta, cfg.J, plant.n, cfg.quadrant_mask, rng,
                             cfg.sample_controller_states)
        result: StageResult = run_stage(plant, gains, batch, horizon, cfg.epochs, cfg.zeta, cfg.step, adam)
        record = StageRecord(k, horizon, result.gains, None, result.loss_history,
                             result.gradient_norm_history, gains_hash(gains), gains_hash(result.gains),
                             batch=batch)
        if result.failed:
            record.status = f"training failed: {result.divergence}"
        else:
            if result.divergence:
                record.status = f"stopped early: {result.divergence}"
            sys_k = assemble_closed_loop(plant, result.gains)
            try:
                cert = certify(sys_k, ref, cfg.eps, options)
            except CertificationError as err:
                record.status = f"not certified: {err}"
            else:
                record.alpha = cert.alpha
                record.certificate = cert
                record.verification = verify_certificate(sys_k, cert, ref).to_dict()
                if cert.alpha > report.best_certificate.alpha:
                    report.best_stage = k
                    report.best_gains = result.gains
                    report.best_certificate = cert
                    record.incumbent = True
        record.alpha_max = report.best_certificate.alpha
        report.stages.append(record)
        log.info("stage %d (t_k=%.4g): loss %.6g, alpha %s, alpha_max %.6g", k, horizon,
                 record.loss_history[-1] if record.loss_history else float("nan"),
                 "n/a" if record.alpha is None else f"{record.alpha:.6g}", record.alpha_max)
        if on_stage is not None:
            on_stage(record)
        gains = result.gains
    report.elapsed = time.perf_counter() - started
    return report


@dataclass(frozen=True)
class ControllerSummary:
    converged: bool
    diverged: bool
    final_norm: float
    initial_norm: float
    max_saturated_input: float
    max_unsaturated_input: float
    limit_violations: int
    energy: float
    divergence_time: float | None = None

    def to_dict(self) -> dict:
        return asdict(self)


def evaluate_controller(plant: PlantModel, gains: ControllerGains, x0, T: float,
                        zeta: float | None = None, step: float = DEFAULT_STEP,
                        tol: float = 1e-2) -> ControllerSummary:
    """Simulate from ``x0`` and summarize the response.

    ``converged`` means |x(T)| <= tol * |x(0)|. ``limit_violations`` counts
    grid points where the unsaturated command exceeds the unit limit in some
    channel; the applied input sat(u) never does. Divergence is reported in
    the summary rather than raised.
    """
    sys = assemble_closed_loop(plant, gains)
    x0 = np.asarray(x0, dtype=float)
    if x0.shape == (plant.n,):
        x0 = np.concatenate([x0, np.zeros(gains.n_c)])
    n0 = float(np.linalg.norm(x0))
    try:
        traj = integrate(sys, x0, T, step, zeta)
    except DivergenceError as err:
        return ControllerSummary(False, True, float("inf"), n0, float("nan"), float("nan"), -1,
                                 float("inf"), err.time)
    u = traj.inputs
    applied = np.clip(u, -1.0, 1.0)
    final = float(np.linalg.norm(traj.final_state))
    return ControllerSummary(
        converged=final <= tol * n0,
        diverged=False,
        final_norm=final,
        initial_norm=n0,
        max_saturated_input=float(np.max(np.abs(applied), initial=0.0)),
        max_unsaturated_input=float(np.max(np.abs(u), initial=0.0)),
        limit_violations=int(np.sum(np.any(np.abs(u) > 1.0, axis=1))),
        energy=traj.loss,
    )
