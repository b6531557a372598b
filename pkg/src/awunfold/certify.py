"""Contractively invariant ellipsoids for the saturated closed loop.

For fixed gains, an ellipsoid {x : x^T P x <= 1} is contractively invariant
if some auxiliary gain H satisfies, for every selector nu in {0,1}^m,

    (A - BF + B M(nu))^T P + P (A - BF + B M(nu)) < 0,
    M(nu) = diag(nu) F + (I - diag(nu)) H,

and |H x|_inf <= 1 on the ellipsoid. Its size is measured by the largest
alpha with alpha * X_R inside it, X_R a polytope given by its vertices.

With Q = P^{-1}, Z = H Q and gamma = 1/alpha^2 the size maximization is a
semidefinite program (linear objective, PSD-cone constraints):

    minimize gamma
    s.t.  Q - eps I                                   >= 0
          [[gamma, v_i^T], [v_i, Q]]                  >= 0   each vertex
          -(X_nu + X_nu^T) - eps I                    >= 0   each nu
          [[1/s, Z_j], [Z_j^T, Q]]                    >= 0   each row j
    X_nu = (A - BF) Q + B diag(nu) F Q + B (I - diag(nu)) Z

The problem is emitted in a scaled frame (Q, Z, gamma) = (s Q~, s Z~,
gamma~ / s), which is an exact reparametrization; ``s = 1`` gives the
unscaled form. Certificates returned by :func:`solve_alpha` are re-checked
by :func:`verify_certificate` with plain eigenvalue computations.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .model import ClosedLoopSystem

DEFAULT_EPS = 1e-6
LYAPUNOV_TOL = 1e-9
CONTAINMENT_TOL = 1e-8


class CertificationError(RuntimeError):
    pass


class InfeasibleError(CertificationError):
    """No contractively invariant ellipsoid satisfies the constraints."""


class SolverError(CertificationError):
    def __init__(self, message: str, status: str | None = None):
        super().__init__(message if status is None else f"{message} (solver status: {status})")
        self.status = status


@dataclass(frozen=True)
class ShapeRefSet:
    vertices: np.ndarray  # (l, N)

    def __post_init__(self):
        V = np.array(self.vertices, dtype=float, ndmin=2)
        if V.shape[0] == 0 or V.shape[1] == 0:
            raise ValueError("shape reference set needs at least one vertex")
        if not np.all(np.isfinite(V)):
            raise ValueError("shape reference vertices must be finite")
        if not np.any(V):
            raise ValueError("shape reference set needs a nonzero vertex")
        V.flags.writeable = False
        object.__setattr__(self, "vertices", V)

    @classmethod
    def from_partial(cls, vertices, dim: int) -> ShapeRefSet:
        """Pad vertices given in leading (plant) coordinates with zeros."""
        V = np.array(vertices, dtype=float, ndmin=2)
        if V.shape[1] > dim:
            raise ValueError(f"vertices have {V.shape[1]} coordinates, state has {dim}")
        return cls(np.hstack([V, np.zeros((V.shape[0], dim - V.shape[1]))]))

    @property
    def dim(self) -> int:
        return self.vertices.shape[1]

    def scaled(self, c: float) -> ShapeRefSet:
        return ShapeRefSet(c * self.vertices)


def vertex_selectors(m: int) -> list[tuple[int, ...]]:
    """All 2^m selectors nu in {0,1}^m."""
    return list(itertools.product((0, 1), repeat=m))


def vertex_matrix(nu, F, H) -> np.ndarray:
    """M(nu, F, H) = diag(nu) F + (I - diag(nu)) H."""
    nu = np.asarray(nu)
    if not np.all((nu == 0) | (nu == 1)):
        raise ValueError(f"selector entries must be 0 or 1, got {nu}")
    F = np.asarray(F, dtype=float)
    H = np.asarray(H, dtype=float)
    if F.shape != H.shape or F.shape[0] != nu.shape[0]:
        raise ValueError(f"shape mismatch: nu {nu.shape}, F {F.shape}, H {H.shape}")
    D = np.diag(nu.astype(float))
    return D @ F + (np.eye(len(nu)) - D) @ H


@dataclass(frozen=True)
class LmiBlock:
    """Constraint ``constant + sum_i y_i * coefficients[i] >= 0`` (PSD)."""

    name: str
    constant: np.ndarray
    coefficients: np.ndarray  # (n_vars, k, k)

    def evaluate(self, y) -> np.ndarray:
        return self.constant + np.tensordot(y, self.coefficients, axes=1)


@dataclass(frozen=True)
class SdpProblem:
    """Standard-form SDP: minimize c^T y subject to every block PSD.

    ``y`` stacks the upper triangle of Q (row by row), Z row-major and gamma,
    all in the frame scaled by ``scale``.
    """

    system: ClosedLoopSystem
    reference: ShapeRefSet
    eps: float
    scale: float
    objective: np.ndarray
    blocks: list[LmiBlock] = field(repr=False)

    @property
    def n_vars(self) -> int:
        return len(self.objective)

    def pack(self, Q, Z, gamma) -> np.ndarray:
        N = self.system.dim
        iu = np.triu_indices(N)
        return np.concatenate([np.asarray(Q, float)[iu], np.asarray(Z, float).ravel(), [gamma]])

    def split(self, y):
        N, m = self.system.dim, self.system.m
        k = N * (N + 1) // 2
        Q = np.zeros((N, N))
        Q[np.triu_indices(N)] = y[:k]
        Q = Q + np.triu(Q, 1).T
        Z = np.asarray(y[k:k + m * N]).reshape(m, N)
        return Q, Z, float(y[-1])

    def evaluate(self, Q, Z, gamma) -> list[np.ndarray]:
        y = self.pack(Q, Z, gamma)
        return [b.evaluate(y) for b in self.blocks]

    def unscale(self, Q, Z, gamma):
        """Map a scaled-frame point to the original (Q, Z, gamma)."""
        s = self.scale
        return s * Q, s * Z, gamma / s


def _affine_block(name, fn, n_vars, split) -> LmiBlock:
    const = fn(*split(np.zeros(n_vars)))
    coefs = np.empty((n_vars, *const.shape))
    for i in range(n_vars):
        e = np.zeros(n_vars)
        e[i] = 1.0
        coefs[i] = fn(*split(e)) - const
    return LmiBlock(name, const, coefs)


def build_sdp(sys: ClosedLoopSystem, ref: ShapeRefSet, eps: float = DEFAULT_EPS,
              scale: float = 1.0) -> SdpProblem:
    if not eps > 0:
        raise ValueError(f"strictness margin must be positive, got {eps}")
    if not scale > 0:
        raise ValueError(f"scale must be positive, got {scale}")
    if ref.dim != sys.dim:
        raise ValueError(f"reference vertices have dimension {ref.dim}, system has {sys.dim}")
    N, m = sys.dim, sys.m
    n_vars = N * (N + 1) // 2 + m * N + 1
    c = np.zeros(n_vars)
    c[-1] = 1.0
    shell = SdpProblem(sys, ref, eps, scale, c, [])
    split = shell.split
    I_N = np.eye(N)
    A_cl, B, F = sys.A_cl, sys.B, sys.F

    def positivity(Q, Z, g):
        return Q - eps * I_N

    def containment(v):
        v = v.reshape(-1, 1)
        return lambda Q, Z, g: np.block([[np.array([[g]]), v.T], [v, Q]])

    def lyapunov(nu):
        D = np.diag(np.asarray(nu, dtype=float))

        def fn(Q, Z, g):
            X = A_cl @ Q + B @ D @ F @ Q + B @ (np.eye(m) - D) @ Z
            return -(X + X.T) - eps * I_N
        return fn

    def row_bound(j):
        return lambda Q, Z, g: np.block([[np.array([[1.0 / scale]]), Z[j:j + 1]], [Z[j:j + 1].T, Q]])

    blocks = [_affine_block("Q>=eps", positivity, n_vars, split)]
    blocks += [_affine_block(f"vertex[{i}]", containment(v), n_vars, split)
               for i, v in enumerate(ref.vertices)]
    blocks += [_affine_block(f"lyapunov[nu={''.join(map(str, nu))}]", lyapunov(nu), n_vars, split)
               for nu in vertex_selectors(m)]
    blocks += [_affine_block(f"H_row[{j}]", row_bound(j), n_vars, split) for j in range(m)]
    return SdpProblem(sys, ref, eps, scale, c, blocks)


@dataclass(frozen=True)
class SolverOptions:
    abstol: float = 1e-7
    reltol: float = 1e-6
    feastol: float = 1e-7
    maxiters: int = 100


def solve_conic(problem: SdpProblem, options: SolverOptions | None = None):
    """Solve the standard-form problem with CVXOPT. Returns ``(status, y)``."""
    from cvxopt import matrix, solvers

    options = options or SolverOptions()
    # cvxopt form: h_k - sum_i y_i G_k[:, i] in PSD cone, G columns column-major
    Gs = [matrix(-b.coefficients.reshape(problem.n_vars, -1).T.copy()) for b in problem.blocks]
    hs = [matrix(b.constant.copy()) for b in problem.blocks]
    opts = {"show_progress": False, "abstol": options.abstol, "reltol": options.reltol,
            "feastol": options.feastol, "maxiters": options.maxiters}
    sol = solvers.sdp(matrix(problem.objective), Gs=Gs, hs=hs, options=opts)
    y = None if sol["x"] is None else np.array(sol["x"]).ravel()
    return sol["status"], y


@dataclass(frozen=True)
class VerificationReport:
    """Worst value per certificate condition and whether it meets its tolerance.

    * ``P_min_eig``: smallest eigenvalue of P / max eig(P); must be >= tol.
    * ``lyapunov_max_eig``: largest eigenvalue over nu of
      L^{-1} (X^T P + P X) L^{-T} with P = L L^T, i.e. the worst-case
      relative rate (dV/dt) / V of the vertex systems; must be <= -tol.
      This is congruent to X^T P + P X, so the sign test is unchanged.
    * ``H_row_max``: max_j H_j P^{-1} H_j^T; must be <= 1 + tol.
    * ``vertex_max``: max_i alpha^2 v_i^T P v_i; must be <= 1 + tol.
    """

    P_min_eig: float
    lyapunov_max_eig: float
    H_row_max: float
    vertex_max: float
    checks: dict[str, bool]

    @property
    def passed(self) -> bool:
        return all(self.checks.values())

    @property
    def margin(self) -> float:
        """Smallest eigenvalue slack over the definiteness conditions."""
        return min(self.P_min_eig, -self.lyapunov_max_eig)

    def to_dict(self) -> dict:
        return {
            "P_min_eig": self.P_min_eig,
            "lyapunov_max_eig": self.lyapunov_max_eig,
            "H_row_max": self.H_row_max,
            "vertex_max": self.vertex_max,
            "checks": dict(self.checks),
            "passed": self.passed,
        }


@dataclass(frozen=True)
class CertifiedEllipsoid:
    P: np.ndarray
    H: np.ndarray
    alpha: float
    margin: float
    solver_status: str = "unknown"
    solver_alpha: float = float("nan")
    scale: float = 1.0
    eps: float = DEFAULT_EPS

    def to_dict(self) -> dict:
        return {
            "P": np.asarray(self.P).tolist(),
            "H": np.asarray(self.H).tolist(),
            "alpha": float(self.alpha),
            "margin": float(self.margin),
            "solver_status": self.solver_status,
            "solver_alpha": float(self.solver_alpha),
            "scale": float(self.scale),
            "eps": float(self.eps),
        }

    @classmethod
    def from_dict(cls, d: dict) -> CertifiedEllipsoid:
        return cls(np.array(d["P"], float), np.array(d["H"], float), float(d["alpha"]),
                   float(d["margin"]), d.get("solver_status", "unknown"),
                   float(d.get("solver_alpha", "nan")), float(d.get("scale", 1.0)),
                   float(d.get("eps", DEFAULT_EPS)))


def verify_certificate(sys: ClosedLoopSystem, cert: CertifiedEllipsoid, ref: ShapeRefSet,
                       lyapunov_tol: float = LYAPUNOV_TOL,
                       containment_tol: float = CONTAINMENT_TOL) -> VerificationReport:
    """Re-check the invariance conditions by direct eigenvalue computation.

    The Lyapunov inequality is tested after the congruence with the
    Cholesky factor of P, which makes ``lyapunov_tol`` a bound on a decay
    rate (units of 1/time) independent of the ellipsoid size.
    """
    P = np.asarray(cert.P, dtype=float)
    P = 0.5 * (P + P.T)
    eig = np.linalg.eigvalsh(P)
    if not eig[-1] > 0:
        p_min = float(eig[0])
        lyap = float("inf")
        h_max = float("inf")
    else:
        p_min = float(eig[0] / eig[-1])
        lyap = float("inf")
        if p_min > 0:
            L = np.linalg.cholesky(P)
            lyap = -np.inf
            for nu in vertex_selectors(sys.m):
                X = sys.A_cl + sys.B @ vertex_matrix(nu, sys.F, cert.H)
                # L^{-1} (X^T P + P X) L^{-T} = K + K^T with K = L^T X L^{-T}
                K = np.linalg.solve(L, X.T @ L).T
                lyap = max(lyap, float(np.linalg.eigvalsh(K + K.T)[-1]))
            Pinv_Ht = np.linalg.solve(P, np.asarray(cert.H, float).T)
            h_max = float(np.max(np.einsum("ji,ij->j", cert.H, Pinv_Ht)))
        else:
            h_max = float("inf")
    V = ref.vertices
    v_max = float(cert.alpha ** 2 * np.max(np.einsum("ki,ij,kj->k", V, P, V)))
    checks = {
        "P_positive": p_min >= lyapunov_tol,
        "lyapunov": lyap <= -lyapunov_tol,
        "H_row": h_max <= 1.0 + containment_tol,
        "vertex": v_max <= 1.0 + containment_tol,
    }
    return VerificationReport(p_min, lyap, h_max, v_max, checks)


def alpha_measure(P, ref: ShapeRefSet) -> float:
    """Largest alpha with alpha * X_R inside {x^T P x <= 1}.

    Accepts a certificate or a matrix. Containment of the convex hull is
    decided at the vertices.
    """
    P = np.asarray(getattr(P, "P", P), dtype=float)
    V = ref.vertices
    q = np.einsum("ki,ij,kj->k", V, P, V)
    if not np.any(q > 0):
        raise ValueError("alpha is unbounded: every vertex has zero P-norm")
    return float(1.0 / np.sqrt(q.max()))


def _recover(problem: SdpProblem, y):
    Qs, Zs, gs = problem.split(y)
    Q, Z, gamma = problem.unscale(Qs, Zs, gs)
    Q = 0.5 * (Q + Q.T)
    P = np.linalg.inv(Q)
    P = 0.5 * (P + P.T)
    H = Z @ P
    # absorb solver slack in the row bound by shrinking the ellipsoid
    kappa = float(np.max(np.einsum("ji,ij->j", H, np.linalg.solve(P, H.T))))
    if kappa > 1.0:
        P = kappa * P
    return P, H, gamma


def _attempt(problem: SdpProblem, options: SolverOptions):
    try:
        status, y = solve_conic(problem, options)
    except (ArithmeticError, ValueError) as err:
        return f"error: {err}", None
    return status, y


def solve_alpha(problem: SdpProblem, options: SolverOptions | None = None,
                refine: bool = True) -> CertifiedEllipsoid:
    """Solve the size maximization and return a verified certificate.

    A first solve in the problem's own frame estimates alpha; with
    ``refine`` the problem is re-solved in the frame scaled by alpha^2, where
    the reference vertices sit at unit level and the strictness margin is
    meaningful relative to the solution. The best verified candidate wins.

    Raises :class:`InfeasibleError` when no certificate exists and
    :class:`SolverError` when the solver fails or its output does not verify.
    """
    options = options or SolverOptions()
    sys, ref = problem.system, problem.reference
    if np.max(np.linalg.eigvals(sys.A).real) >= 0:
        raise InfeasibleError("unsaturated closed loop is not Hurwitz; no invariant ellipsoid exists")

    frames = [problem] + [build_sdp(sys, ref, problem.eps, problem.scale * f) for f in (1e-2, 1e2)]
    status, y, used = "not run", None, problem
    for frame in frames:
        status, y = _attempt(frame, options)
        used = frame
        if y is not None and status in ("optimal", "unknown"):
            break
        if status == "primal infeasible":
            raise InfeasibleError("no contractively invariant ellipsoid satisfies the LMIs")
        if status == "dual infeasible":
            raise SolverError("ellipsoid size is unbounded for this system", status)
    if y is None:
        raise SolverError("conic solver failed", status)

    candidates = [(used, status, y)]
    if refine:
        gamma_true = used.unscale(*used.split(y))[2]
        if gamma_true > 0:
            rescaled = build_sdp(sys, ref, problem.eps, 1.0 / gamma_true)
            status2, y2 = _attempt(rescaled, options)
            if y2 is not None and status2 in ("optimal", "unknown"):
                candidates.insert(0, (rescaled, status2, y2))

    best, failures = None, []
    for frame, st, yy in candidates:
        try:
            P, H, gamma = _recover(frame, yy)
        except np.linalg.LinAlgError as err:
            failures.append(f"{st}: {err}")
            continue
        alpha = alpha_measure(P, ref)
        cert = CertifiedEllipsoid(P, H, alpha, 0.0, st, 1.0 / np.sqrt(gamma) if gamma > 0 else np.inf,
                                  frame.scale, frame.eps)
        report = verify_certificate(sys, cert, ref)
        if not report.passed:
            failures.append(f"{st}: failed {[k for k, ok in report.checks.items() if not ok]}")
            continue
        cert = CertifiedEllipsoid(P, H, alpha, report.margin, st, cert.solver_alpha, frame.scale, frame.eps)
        if best is None or cert.alpha > best.alpha:
            best = cert
    if best is None:
        raise SolverError("solver output does not verify: " + "; ".join(failures), status)
    return best


def certify(sys: ClosedLoopSystem, ref: ShapeRefSet, eps: float = DEFAULT_EPS,
            options: SolverOptions | None = None) -> CertifiedEllipsoid:
    """Build and solve the size-maximization problem for fixed gains."""
    return solve_alpha(build_sdp(sys, ref, eps), options)
