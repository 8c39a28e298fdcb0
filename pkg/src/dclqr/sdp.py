"""Robust and data-conforming LQR synthesis programs.

All programs use the controllability-type parametrization: the decision
variables are the certificate covariance ``Sigma`` and ``L = K Sigma``, and
the gain is recovered as ``K = L Sigma^{-1}``. The closed loop is
``A + B K`` with ``u = K x + v``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .model import DifferenceInclusion
from .problem import LMI, CostTerm, SdpProblem, Variable, bmat
from .solver import USABLE, SolverConfig, solve
from .statistics import (
    DataSummary,
    NoiseSpec,
    NotPositiveDefinite,
    UnstableClosedLoop,
    is_pd,
    is_psd,
    lyapunov_gramian,
    require_pd,
    spectral_radius,
    symmetrize,
)

log = logging.getLogger(__name__)

SIGMA_MARGIN = 1e-6
METHODS = ("robust", "dc-state", "dc-state-input")


class SynthesisError(ValueError):
    pass


@dataclass(frozen=True)
class CostWeights:
    Q: np.ndarray
    R: np.ndarray

    def __post_init__(self):
        Q, R = symmetrize(self.Q), symmetrize(self.R)
        if not is_psd(Q):
            raise NotPositiveDefinite("Q is not positive semidefinite")
        if not is_pd(R):
            raise NotPositiveDefinite("R is not positive definite")
        object.__setattr__(self, "Q", Q)
        object.__setattr__(self, "R", R)


@dataclass(frozen=True)
class ControllerSolution:
    K: np.ndarray | None
    Sigma: np.ndarray | None
    objective: float
    status: str
    residuals: dict = field(default_factory=dict)
    method: str = ""
    values: dict = field(default_factory=dict, repr=False)
    problem: SdpProblem | None = field(default=None, repr=False, compare=False)

    @property
    def usable(self) -> bool:
        return self.status in USABLE and self.K is not None


def _check_dims(inc: DifferenceInclusion, w: CostWeights, noise: NoiseSpec):
    r_x, r_u = inc.r_x, inc.r_u
    for name, M, n in (("Q", w.Q, r_x), ("R", w.R, r_u), ("W", noise.W, r_x), ("V", noise.V, r_u)):
        if M.shape != (n, n):
            raise SynthesisError(f"{name} has shape {M.shape}, expected {(n, n)}")


def _robust_parts(inc: DifferenceInclusion, w: CostWeights, noise: NoiseSpec):
    _check_dims(inc, w, noise)
    r_x, r_u = inc.r_x, inc.r_u
    Sv = Variable("Sigma", (r_x, r_x), symmetric=True)
    Lv = Variable("L", (r_u, r_x))
    Z0v = Variable("Z0", (r_u, r_u), symmetric=True)
    S, L, Z0 = Sv.expr, Lv.expr, Z0v.expr

    cons = [
        LMI("Sigma", S, SIGMA_MARGIN),
        LMI("Z0", bmat([[Z0, L], [L.T, S]])),
    ]
    for i, v in enumerate(inc.vertices):
        N = v.B @ noise.V @ v.B.T + noise.W
        off = v.A @ S + v.B @ L
        cons.append(LMI(f"vertex[{i}]", bmat([[S - N, off], [off.T, S]])))
    cost = [CostTerm(w.Q, "Sigma"), CostTerm(w.R, "Z0")]
    return [Sv, Lv, Z0v], cost, cons


def assemble_robust_lqr(inc: DifferenceInclusion, w: CostWeights, noise: NoiseSpec) -> SdpProblem:
    """Quadratically stable LQR: ``min tr(Q Sigma) + tr(R Z0)`` over all vertices."""
    variables, cost, cons = _robust_parts(inc, w, noise)
    return SdpProblem(tuple(variables), tuple(cost), tuple(cons), meta={"method": "robust"})


def assemble_dc_state(inc: DifferenceInclusion, w: CostWeights, noise: NoiseSpec,
                      Sigma_data, gamma_prime: float = 10.0) -> SdpProblem:
    """Robust LQR plus ``gamma' * ||Sigma - Sigma_data||_F^2`` through an epigraph ``Z'``."""
    if gamma_prime < 0:
        raise SynthesisError("gamma_prime must be nonnegative")
    Sd = require_pd(Sigma_data, "Sigma_data")
    if Sd.shape != (inc.r_x, inc.r_x):
        raise SynthesisError(f"Sigma_data has shape {Sd.shape}, expected {(inc.r_x, inc.r_x)}")
    variables, cost, cons = _robust_parts(inc, w, noise)
    Zpv = Variable("Zp", (inc.r_x, inc.r_x), symmetric=True)
    D = variables[0].expr - Sd
    cons.append(LMI("frobenius", bmat([[Zpv.expr, D], [D.T, np.eye(inc.r_x)]])))
    cost.append(CostTerm(gamma_prime * np.eye(inc.r_x), "Zp"))
    return SdpProblem(tuple(variables + [Zpv]), tuple(cost), tuple(cons),
                      meta={"method": "dc-state", "gamma_prime": gamma_prime})


def assemble_dc_state_input(inc: DifferenceInclusion, w: CostWeights, noise: NoiseSpec,
                            data: DataSummary, gamma: float = 10.0) -> SdpProblem:
    """Robust LQR plus the relaxed Jeffreys penalty between design and data covariances.

    Adds ``gamma * (tr(Gamma_data^{-1} Z1) + tr(V^{-1} Z2) + tr(Sigma_data Z3))`` with

    * ``Z1 >= Gamma_des``                      (block ``jeffreys-Z1``)
    * ``Z2 >= (L - P Sigma) Sigma^{-1} (.)^T`` with ``P = H_data^T Sigma_data^{-1}``
    * ``Z3 >= Sigma^{-1}``
    """
    if gamma < 0:
        raise SynthesisError("gamma must be nonnegative")
    r_x, r_u = inc.r_x, inc.r_u
    if data.Sigma_data.shape != (r_x, r_x) or data.M_data.shape != (r_u, r_u):
        raise SynthesisError("data summary dimensions do not match the inclusion")
    Sd = require_pd(data.Sigma_data, "Sigma_data")
    Gd = require_pd(data.Gamma_data, "Gamma_data")
    variables, cost, cons = _robust_parts(inc, w, noise)
    S, L = variables[0].expr, variables[1].expr

    Z1v = Variable("Z1", (r_x + r_u, r_x + r_u), symmetric=True)
    Z2v = Variable("Z2", (r_u, r_u), symmetric=True)
    Z3v = Variable("Z3", (r_x, r_x), symmetric=True)

    col = bmat([[S], [L]])
    cons.append(LMI("jeffreys-Z1", bmat([[Z1v.expr - noise.excitation_block(r_x), col],
                                         [col.T, S]])))
    P = np.linalg.solve(Sd, data.H_data).T
    D2 = L - P @ S
    cons.append(LMI("jeffreys-Z2", bmat([[Z2v.expr, D2], [D2.T, S]])))
    I = np.eye(r_x)
    cons.append(LMI("jeffreys-Z3", bmat([[Z3v.expr, I], [I, S]])))

    cost += [
        CostTerm(gamma * np.linalg.inv(Gd), "Z1"),
        CostTerm(gamma * np.linalg.inv(noise.V), "Z2"),
        CostTerm(gamma * Sd, "Z3"),
    ]
    return SdpProblem(tuple(variables + [Z1v, Z2v, Z3v]), tuple(cost), tuple(cons),
                      meta={"method": "dc-state-input", "gamma": gamma})


def recover_gain(Sigma, L, max_cond: float = 1e12) -> np.ndarray:
    """``K`` with ``K Sigma = L``, via a linear solve."""
    Sigma = symmetrize(Sigma)
    L = np.atleast_2d(np.asarray(L, dtype=float))
    cond = np.linalg.cond(Sigma)
    if not np.isfinite(cond) or cond > max_cond:
        raise SynthesisError(f"Sigma is too ill-conditioned to recover the gain (cond {cond:.3g})")
    return np.linalg.solve(Sigma, L.T).T


def riccati_lqr(A, B, w: CostWeights, tol: float = 1e-10, max_iterations: int = 200_000
                ) -> np.ndarray:
    """Certainty-equivalence LQR gain (``u = K x``) by Riccati value iteration."""
    A = np.atleast_2d(np.asarray(A, float))
    B = np.asarray(B, float).reshape(A.shape[0], -1)
    Q, R = w.Q, w.R
    P = Q.copy()
    for _ in range(max_iterations):
        K = -np.linalg.solve(R + B.T @ P @ B, B.T @ P @ A)
        P_next = symmetrize(Q + A.T @ P @ (A + B @ K))
        if not np.all(np.isfinite(P_next)):
            break
        if np.max(np.abs(P_next - P)) <= tol * (1.0 + np.max(np.abs(P_next))):
            P = P_next
            return -np.linalg.solve(R + B.T @ P @ B, B.T @ P @ A)
        P = P_next
    raise SynthesisError("Riccati iteration did not converge; is (A, B) stabilizable?")


def synthesize(method: str, inc: DifferenceInclusion, w: CostWeights, noise: NoiseSpec,
               data: DataSummary | None = None, gamma: float = 10.0,
               gamma_prime: float = 10.0, cfg: SolverConfig | None = None
               ) -> ControllerSolution:
    if method == "robust":
        problem = assemble_robust_lqr(inc, w, noise)
    elif method == "dc-state":
        if data is None:
            raise SynthesisError("dc-state needs a data summary")
        problem = assemble_dc_state(inc, w, noise, data.Sigma_data, gamma_prime)
    elif method == "dc-state-input":
        if data is None:
            raise SynthesisError("dc-state-input needs a data summary")
        problem = assemble_dc_state_input(inc, w, noise, data, gamma)
    else:
        raise SynthesisError(f"unknown method {method!r}; expected one of {METHODS}")

    sol = solve(problem, cfg)
    if not sol.usable:
        log.info("%s synthesis: %s", method, sol.status)
        return ControllerSolution(None, None, sol.objective, sol.status, sol.residuals,
                                  method, sol.values, problem)
    if sol.status != "optimal":
        log.info("%s synthesis returned %s", method, sol.status)
    Sigma = sol.values["Sigma"]
    try:
        K = recover_gain(Sigma, sol.values["L"])
    except SynthesisError as exc:
        log.warning("%s synthesis: %s", method, exc)
        return ControllerSolution(None, Sigma, sol.objective, "failed", sol.residuals,
                                  method, sol.values, problem)
    return ControllerSolution(K, Sigma, sol.objective, sol.status, sol.residuals,
                              method, sol.values, problem)


@dataclass(frozen=True)
class VertexCheck:
    index: int
    spectral_radius: float
    min_gap_eig: float | None  # lambda_min(Sigma* - Sigma_i); None when unstable
    passed: bool


@dataclass(frozen=True)
class CertificateReport:
    passed: bool
    vertices: tuple[VertexCheck, ...]
    lmi_residuals: dict
    violations: tuple[str, ...]


def verify_certificate(solution: ControllerSolution, inc: DifferenceInclusion,
                       noise: NoiseSpec, tol: float = 1e-6, lmi_tol: float = 1e-7
                       ) -> CertificateReport:
    """Check that ``Sigma*`` dominates every vertex Gramian under ``K*``.

    Problems are reported, never raised, so negative controls can be inspected.
    """
    if solution.K is None or solution.Sigma is None:
        raise SynthesisError(f"no gain to verify (status {solution.status})")
    K, S = solution.K, solution.Sigma
    checks, violations = [], []
    for i, v in enumerate(inc.vertices):
        rho = spectral_radius(v.A + v.B @ K)
        try:
            Si = lyapunov_gramian(v.A, v.B, K, noise.V, noise.W)
        except UnstableClosedLoop:
            checks.append(VertexCheck(i, rho, None, False))
            violations.append(f"vertex {i}: closed loop unstable (spectral radius {rho:.6g})")
            continue
        gap = float(np.linalg.eigvalsh(symmetrize(S - Si))[0])
        ok = gap >= -tol
        if not ok:
            violations.append(f"vertex {i}: lambda_min(Sigma* - Sigma_i) = {gap:.3g}")
        checks.append(VertexCheck(i, rho, gap, ok))

    residuals = {}
    if solution.problem is not None and solution.values:
        residuals = solution.problem.residuals(solution.values)
        for name, r in residuals.items():
            if r < -lmi_tol:
                violations.append(f"LMI {name}: minimum eigenvalue {r:.3g}")
    return CertificateReport(not violations, tuple(checks), residuals, tuple(violations))
