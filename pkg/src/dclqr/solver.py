"""Conic back end for :class:`SdpProblem`.

Every LMI ``F0 + sum_j x_j F_j >= 0`` becomes one PSD cone block. The
scalar unknowns ``x`` are the concatenated coordinates of the problem
variables (see :meth:`Variable.basis`); variables are otherwise free.
Clarabel is the default back end, cvxopt's ``sdp`` is kept as an
alternative for cross-checking.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import TextIO

import clarabel
import numpy as np
from cvxopt import matrix, solvers
from scipy import sparse

from .problem import SdpProblem

log = logging.getLogger(__name__)

OPTIMAL = "optimal"
NEAR_OPTIMAL = "near-optimal"
INFEASIBLE = "infeasible"
FAILED = "failed"
USABLE = (OPTIMAL, NEAR_OPTIMAL)


@dataclass(frozen=True)
class SolverConfig:
    abs_tol: float = 1e-8
    rel_tol: float = 1e-8
    max_iterations: int = 5000
    feasibility_margin: float = 1e-7
    backend: str = "clarabel"

    def __post_init__(self):
        if self.abs_tol <= 0 or self.rel_tol <= 0 or self.feasibility_margin <= 0:
            raise ValueError("solver tolerances must be positive")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")


@dataclass(frozen=True)
class Solution:
    status: str
    values: dict = field(default_factory=dict)
    objective: float = float("nan")
    iterations: int = 0
    residuals: dict = field(default_factory=dict)
    diagnostics: dict = field(default_factory=dict)

    @property
    def usable(self) -> bool:
        return self.status in USABLE


@dataclass(frozen=True)
class LoweredProblem:
    c: np.ndarray
    G: list  # dense (m*m, nvar) arrays, one per LMI
    h: list  # dense (m, m) arrays
    offsets: dict  # variable name -> (start, stop)


def lower(problem: SdpProblem) -> LoweredProblem:
    offsets = {}
    start = 0
    for var in problem.variables:
        offsets[var.name] = (start, start + var.size)
        start += var.size
    nvar = start

    c = np.zeros(nvar)
    for term in problem.cost:
        var = problem.variable(term.var)
        lo = offsets[var.name][0]
        for k, E in enumerate(var.basis()):
            c[lo + k] += term.evaluate(E)

    G, h = [], []
    for con in problem.constraints:
        m = con.size
        Gk = np.zeros((m * m, nvar))
        for name in con.expr.variables():
            var = problem.variable(name)
            lo = offsets[name][0]
            for k, E in enumerate(var.basis()):
                Gk[:, lo + k] = -con.expr.linear_part(name, E).ravel(order="F")
        G.append(Gk)
        h.append(con.expr.const - con.margin * np.eye(m))
    return LoweredProblem(c, G, h, offsets)


def _unpack(problem: SdpProblem, lowered: LoweredProblem, x: np.ndarray) -> dict:
    return {
        var.name: var.unpack(x[slice(*lowered.offsets[var.name])])
        for var in problem.variables
    }


def solve(problem: SdpProblem, cfg: SolverConfig | None = None) -> Solution:
    """Solve ``problem``; never raises on numerical trouble.

    Outcomes are normalized to ``optimal``, ``near-optimal`` (tolerances
    met only at a 10x relaxation), ``infeasible`` or ``failed``. A usable
    status also requires every LMI residual ``>= -feasibility_margin``.
    The back ends stop on scaled residuals, so a converged point can miss
    that absolute bound on badly scaled problems; it is then re-solved
    once with 100x tighter tolerances.
    """
    cfg = cfg or SolverConfig()
    lowered = lower(problem)
    sol = _solve_lowered(problem, lowered, cfg)
    if sol.status == FAILED and sol.diagnostics.get("margin_violated"):
        tight = replace(cfg, abs_tol=cfg.abs_tol * 1e-2, rel_tol=cfg.rel_tol * 1e-2)
        log.info("residual %.3g misses the margin; refining", sol.diagnostics["worst_residual"])
        sol = _solve_lowered(problem, lowered, tight)
        sol.diagnostics["refined"] = True
    return sol


def _solve_lowered(problem: SdpProblem, lowered: LoweredProblem, cfg: SolverConfig) -> Solution:
    if cfg.backend == "clarabel":
        raw = _run_clarabel(lowered, cfg)
    elif cfg.backend == "cvxopt":
        raw = _run_cvxopt(lowered, cfg)
    else:
        raise ValueError(f"unknown solver backend {cfg.backend!r}")

    kind, x, diag = raw
    iterations = int(diag.pop("iterations", 0) or 0)
    if kind == "infeasible":
        return Solution(INFEASIBLE, iterations=iterations, diagnostics=diag)
    if kind == "failed" or x is None or not np.all(np.isfinite(x)):
        return Solution(FAILED, iterations=iterations, diagnostics=diag)

    values = _unpack(problem, lowered, x)
    residuals = problem.residuals(values)
    objective = problem.objective(values)
    worst = min(residuals.values()) if residuals else 0.0
    diag["worst_residual"] = worst

    if worst < -cfg.feasibility_margin:
        diag["margin_violated"] = kind in ("optimal", "near-optimal")
        status = FAILED
    elif kind == "optimal":
        status = OPTIMAL
    elif kind == "near-optimal":
        status = NEAR_OPTIMAL
    else:
        status = FAILED
    return Solution(status, values, objective, iterations, residuals, diag)


def _svec_index(m: int):
    # upper triangle, column-major; off-diagonals scaled by sqrt(2)
    rows, cols = np.triu_indices(m)
    order = np.lexsort((rows, cols))
    rows, cols = rows[order], cols[order]
    scale = np.where(rows == cols, 1.0, np.sqrt(2.0))
    return rows + cols * m, scale, rows, cols


def _run_clarabel(lowered: LoweredProblem, cfg: SolverConfig):
    nvar = lowered.c.size
    A_blocks, b_parts, cones = [], [], []
    for Gk, hk in zip(lowered.G, lowered.h):
        m = hk.shape[0]
        flat, scale, rows, cols = _svec_index(m)
        # s = svec(F0 + sum_j x_j F_j) = b - A x with G = -vec(F_j)
        A_blocks.append(Gk[flat, :] * scale[:, None])
        b_parts.append(hk[rows, cols] * scale)
        cones.append(clarabel.PSDTriangleConeT(m))
    A = sparse.csc_matrix(np.vstack(A_blocks))
    P = sparse.csc_matrix((nvar, nvar))

    st = clarabel.DefaultSettings()
    st.verbose = False
    st.max_iter = cfg.max_iterations
    st.max_threads = 1
    st.tol_gap_abs = cfg.abs_tol
    st.tol_gap_rel = cfg.rel_tol
    st.tol_feas = cfg.abs_tol
    st.reduced_tol_gap_abs = 10 * cfg.abs_tol
    st.reduced_tol_gap_rel = 10 * cfg.rel_tol
    st.reduced_tol_feas = 10 * cfg.abs_tol
    try:
        res = clarabel.DefaultSolver(P, lowered.c, A, np.concatenate(b_parts), cones, st).solve()
    except Exception as exc:  # the Rust core surfaces panics as generic exceptions
        log.warning("conic solver broke down: %s", exc)
        return "failed", None, {"error": f"{type(exc).__name__}: {exc}"}

    status = str(res.status)
    diag = {
        "backend": "clarabel",
        "solver_status": status,
        "iterations": res.iterations,
        "primal_residual": float(res.r_prim),
        "dual_residual": float(res.r_dual),
        "dual_objective": float(res.obj_val_dual),
    }
    if status in ("PrimalInfeasible", "AlmostPrimalInfeasible"):
        z = np.asarray(res.z)
        diag["certificate"] = {"kind": "dual ray", "b_dot_z": float(np.dot(np.concatenate(b_parts), z))}
        return "infeasible", None, diag
    x = np.asarray(res.x, dtype=float)
    if status == "Solved":
        return "optimal", x, diag
    if status == "AlmostSolved":
        return "near-optimal", x, diag
    return "failed", x, diag


def _run_cvxopt(lowered: LoweredProblem, cfg: SolverConfig):
    options = {
        "show_progress": False,
        "abstol": cfg.abs_tol,
        "reltol": cfg.rel_tol,
        "feastol": cfg.abs_tol,
        "maxiters": cfg.max_iterations,
    }
    try:
        raw = solvers.sdp(
            matrix(lowered.c),
            Gs=[matrix(Gk) for Gk in lowered.G],
            hs=[matrix(hk) for hk in lowered.h],
            options=options,
        )
    except (ArithmeticError, ValueError) as exc:
        log.warning("conic solver broke down: %s", exc)
        return "failed", None, {"error": f"{type(exc).__name__}: {exc}"}

    diag = {
        key.replace(" ", "_"): raw.get(key)
        for key in ("primal infeasibility", "dual infeasibility", "gap", "relative gap")
        if raw.get(key) is not None
    }
    diag.update(backend="cvxopt", solver_status=raw["status"], iterations=raw.get("iterations"))
    if raw["status"] == "primal infeasible":
        diag["certificate"] = {
            "kind": "dual ray",
            "residual": raw.get("residual as primal infeasibility certificate"),
        }
        return "infeasible", None, diag
    if raw["x"] is None or raw["status"] == "dual infeasible":
        return "failed", None, diag
    x = np.asarray(raw["x"]).ravel()
    if raw["status"] == "optimal":
        return "optimal", x, diag
    return ("near-optimal" if _within(diag, cfg, 10.0) else "failed"), x, diag


def _within(diag: dict, cfg: SolverConfig, factor: float) -> bool:
    pinf = diag.get("primal_infeasibility")
    dinf = diag.get("dual_infeasibility")
    if pinf is None or dinf is None:
        return False
    if max(pinf, dinf) > factor * cfg.abs_tol:
        return False
    gap = diag.get("gap")
    rgap = diag.get("relative_gap")
    return (gap is not None and gap <= factor * cfg.abs_tol) or (
        rgap is not None and rgap <= factor * cfg.rel_tol
    )


def dump_problem(problem: SdpProblem, stream: TextIO) -> None:
    """Write ``problem`` in a sparse conic text format.

    Layout (one record per line, whitespace separated, indices 0-based)::

        CONIC 1
        VAR <name> <sym|rect> <rows> <cols> <offset> <size>
        CONES FREE <nvar> PSD <m_1> ... <m_K>
        OBJ <j> <c_j>
        OBJCONST <value>
        BLOCK <k> <m_k> <name>
        F0 <k> <i> <j> <value>         lower triangle of F0
        F <k> <i> <j> <var> <value>    lower triangle of F_var

    Block ``k`` reads ``F0 + sum_j x_j F_j >= 0``.
    """
    lowered = lower(problem)
    nvar = lowered.c.size
    stream.write("CONIC 1\n")
    for var in problem.variables:
        lo, hi = lowered.offsets[var.name]
        kind = "sym" if var.symmetric else "rect"
        stream.write(f"VAR {var.name} {kind} {var.shape[0]} {var.shape[1]} {lo} {hi - lo}\n")
    sizes = " ".join(str(con.size) for con in problem.constraints)
    stream.write(f"CONES FREE {nvar} PSD {sizes}\n")
    for j in np.flatnonzero(lowered.c):
        stream.write(f"OBJ {j} {float(lowered.c[j])!r}\n")
    stream.write(f"OBJCONST {float(problem.cost_constant)!r}\n")
    for k, (con, Gk, hk) in enumerate(zip(problem.constraints, lowered.G, lowered.h)):
        m = con.size
        stream.write(f"BLOCK {k} {m} {con.name}\n")
        for i in range(m):
            for j in range(i + 1):
                if hk[i, j] != 0.0:
                    stream.write(f"F0 {k} {i} {j} {float(hk[i, j])!r}\n")
        for col in range(nvar):
            F = -Gk[:, col].reshape(m, m, order="F")
            for i in range(m):
                for j in range(i + 1):
                    if F[i, j] != 0.0:
                        stream.write(f"F {k} {i} {j} {col} {float(F[i, j])!r}\n")
