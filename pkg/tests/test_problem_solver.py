import io

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_pd
from dclqr.problem import LMI, Affine, CostTerm, ProblemError, SdpProblem, Variable, bmat
from dclqr import solver as solver_mod
from dclqr.solver import (
    FAILED,
    INFEASIBLE,
    OPTIMAL,
    SolverConfig,
    dump_problem,
    lower,
    solve,
)
from dclqr.statistics import lyapunov_gramian


# --- expression layer ---------------------------------------------------

def test_variable_pack_unpack(rng):
    v = Variable("S", (3, 3), symmetric=True)
    X = random_pd(rng, 3)
    np.testing.assert_allclose(v.unpack(v.pack(X)), X)
    assert v.size == 6 and len(list(v.basis())) == 6
    r = Variable("L", (2, 3))
    Y = rng.standard_normal((2, 3))
    np.testing.assert_array_equal(r.unpack(r.pack(Y)), Y)


def test_affine_evaluation_matches_numpy(rng):
    S = Variable("S", (2, 2), symmetric=True)
    L = Variable("L", (1, 2))
    A, B = rng.standard_normal((2, 2)), rng.standard_normal((2, 1))
    Sv, Lv = random_pd(rng, 2), rng.standard_normal((1, 2))
    expr = A @ S.expr @ A.T + B @ L.expr - 2.0 * S.expr + np.eye(2)
    vals = {"S": Sv, "L": Lv}
    np.testing.assert_allclose(expr.evaluate(vals), A @ Sv @ A.T + B @ Lv - 2 * Sv + np.eye(2))
    np.testing.assert_allclose(expr.T.evaluate(vals), (A @ Sv @ A.T + B @ Lv - 2 * Sv + np.eye(2)).T)
    assert expr.variables() == {"S", "L"}


def test_bmat_layout(rng):
    S = Variable("S", (2, 2), symmetric=True)
    L = Variable("L", (1, 2))
    M = bmat([[S.expr, L.expr.T], [L.expr, None]])
    Sv, Lv = random_pd(rng, 2), rng.standard_normal((1, 2))
    out = M.evaluate({"S": Sv, "L": Lv})
    np.testing.assert_allclose(out, np.block([[Sv, Lv.T], [Lv, np.zeros((1, 1))]]))
    with pytest.raises(ProblemError):
        bmat([[S.expr, None], [None, None]])
    with pytest.raises(ProblemError):
        bmat([[S.expr, L.expr]])


def test_problem_validation():
    x = Variable("x", (1, 1), symmetric=True)
    y = Variable("y", (1, 2))
    with pytest.raises(ProblemError, match="duplicate"):
        SdpProblem((x, x), (CostTerm(np.eye(1), "x"),), ())
    with pytest.raises(ProblemError, match="never used"):
        SdpProblem((x, y), (CostTerm(np.eye(1), "x"),), ())
    with pytest.raises(ProblemError, match="unknown"):
        SdpProblem((x,), (CostTerm(np.eye(1), "z"),), ())
    with pytest.raises(ProblemError, match="not square"):
        SdpProblem((y,), (), (LMI("y", y.expr),))
    with pytest.raises(ProblemError, match="not symmetric"):
        SdpProblem((y,), (), (LMI("y", bmat([[np.eye(1), y.expr], [np.zeros((2, 1)), np.eye(2)]])),))


# --- solve ----------------------------------------------------------------

def scalar_problem():
    x = Variable("x", (1, 1), symmetric=True)
    return SdpProblem((x,), (CostTerm(np.eye(1), "x"),), (LMI("lb", x.expr - np.eye(1)),))


def test_scalar_lower_bound():
    sol = solve(scalar_problem())
    assert sol.status == OPTIMAL
    assert sol.values["x"][0, 0] == pytest.approx(1.0, abs=1e-7)
    assert sol.objective == pytest.approx(1.0, abs=1e-7)


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 4))
def test_trace_min_above_psd_matrix(seed, d):
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((d, d - 1 if d > 1 else 1))
    M = X @ X.T
    S = Variable("S", (d, d), symmetric=True)
    prob = SdpProblem((S,), (CostTerm(np.eye(d), "S"),), (LMI("order", S.expr - M),))
    sol = solve(prob)
    assert sol.status == OPTIMAL
    np.testing.assert_allclose(sol.values["S"], M, atol=1e-6)


def test_trace_min_lyapunov_inequality(rng):
    M = rng.standard_normal((3, 3))
    M *= 0.7 / max(abs(np.linalg.eigvals(M)))
    N = random_pd(rng, 3)
    S = Variable("S", (3, 3), symmetric=True)
    prob = SdpProblem((S,), (CostTerm(np.eye(3), "S"),),
                      (LMI("lyap", S.expr - M @ S.expr @ M.T - N),))
    sol = solve(prob)
    assert sol.status == OPTIMAL
    ref = lyapunov_gramian(M, np.zeros((3, 1)), np.zeros((1, 3)), [[1.0]], N)
    np.testing.assert_allclose(sol.values["S"], ref, atol=1e-6 * np.max(np.abs(ref)))


def test_infeasible_is_reported_with_certificate():
    x = Variable("x", (1, 1), symmetric=True)
    prob = SdpProblem((x,), (CostTerm(np.eye(1), "x"),),
                      (LMI("lb", x.expr - np.eye(1)), LMI("ub", -1.0 * x.expr)))
    for backend in ("clarabel", "cvxopt"):
        sol = solve(prob, SolverConfig(backend=backend))
        assert sol.status == INFEASIBLE
        assert sol.diagnostics["certificate"]["kind"] == "dual ray"
        assert not sol.usable


def test_unbounded_problem_does_not_raise():
    x = Variable("x", (1, 1), symmetric=True)
    prob = SdpProblem((x,), (CostTerm(np.eye(1), "x"),), (LMI("ub", -1.0 * x.expr),))
    assert solve(prob).status == FAILED


def test_unknown_backend():
    with pytest.raises(ValueError, match="backend"):
        solve(scalar_problem(), SolverConfig(backend="nope"))


def test_solver_config_validation():
    with pytest.raises(ValueError):
        SolverConfig(abs_tol=0)
    with pytest.raises(ValueError):
        SolverConfig(max_iterations=0)


def small_lmi_problem(rng):
    S = Variable("S", (2, 2), symmetric=True)
    L = Variable("L", (1, 2))
    Z = Variable("Z", (1, 1), symmetric=True)
    A = np.array([[1.1, 0.2], [0.0, 0.9]])
    B = np.array([[0.0], [1.0]])
    off = A @ S.expr + B @ L.expr
    cons = (
        LMI("S", S.expr, 1e-6),
        LMI("Z", bmat([[Z.expr, L.expr], [L.expr.T, S.expr]])),
        LMI("v", bmat([[S.expr - np.eye(2), off], [off.T, S.expr]])),
    )
    return SdpProblem((S, L, Z), (CostTerm(np.eye(2), "S"), CostTerm(np.eye(1), "Z")), cons)


def test_solution_is_deterministic(rng):
    prob = small_lmi_problem(rng)
    a, b = solve(prob), solve(prob)
    assert a.status == OPTIMAL
    for k in a.values:
        np.testing.assert_array_equal(a.values[k], b.values[k])


def test_objective_consistent_and_backends_agree(rng):
    prob = small_lmi_problem(rng)
    a = solve(prob, SolverConfig(backend="clarabel"))
    b = solve(prob, SolverConfig(backend="cvxopt"))
    assert a.status == OPTIMAL and b.status == OPTIMAL
    assert a.objective == pytest.approx(prob.objective(a.values), rel=1e-12)
    assert a.objective == pytest.approx(b.objective, rel=1e-6)
    assert a.objective == pytest.approx(-a.diagnostics["dual_objective"], rel=1e-6) or \
        a.objective == pytest.approx(a.diagnostics["dual_objective"], rel=1e-6)
    assert min(a.residuals.values()) >= -1e-7


def test_lowering_reproduces_expressions(rng):
    prob = small_lmi_problem(rng)
    low = lower(prob)
    x = rng.standard_normal(low.c.size)
    values = {v.name: v.unpack(x[slice(*low.offsets[v.name])]) for v in prob.variables}
    for con, G, h in zip(prob.constraints, low.G, low.h):
        m = con.size
        lhs = h - (G @ x).reshape(m, m, order="F")
        np.testing.assert_allclose(lhs, con.expr.evaluate(values) - con.margin * np.eye(m), atol=1e-12)
    assert low.c @ x == pytest.approx(prob.objective(values), rel=1e-12)


def parse_dump(text):
    lines = text.strip().splitlines()
    assert lines[0] == "CONIC 1"
    blocks, F0, F, obj, nvar = {}, {}, {}, {}, None
    for line in lines[1:]:
        tok = line.split()
        if tok[0] == "CONES":
            nvar = int(tok[2])
        elif tok[0] == "OBJ":
            obj[int(tok[1])] = float(tok[2])
        elif tok[0] == "BLOCK":
            blocks[int(tok[1])] = int(tok[2])
        elif tok[0] == "F0":
            F0[tuple(map(int, tok[1:4]))] = float(tok[4])
        elif tok[0] == "F":
            F[tuple(map(int, tok[1:5]))] = float(tok[5])
    return nvar, blocks, F0, F, obj


def test_dump_roundtrip(rng):
    prob = small_lmi_problem(rng)
    buf = io.StringIO()
    dump_problem(prob, buf)
    nvar, blocks, F0, F, obj = parse_dump(buf.getvalue())
    low = lower(prob)
    assert nvar == low.c.size
    x = rng.standard_normal(nvar)
    values = {v.name: v.unpack(x[slice(*low.offsets[v.name])]) for v in prob.variables}
    for k, con in enumerate(prob.constraints):
        m = blocks[k]
        M = np.zeros((m, m))
        for (kk, i, j), val in F0.items():
            if kk == k:
                M[i, j] = M[j, i] = val
        for (kk, i, j, col), val in F.items():
            if kk == k:
                M[i, j] += val * x[col]
                if i != j:
                    M[j, i] += val * x[col]
        np.testing.assert_allclose(M, con.expr.evaluate(values) - con.margin * np.eye(m), atol=1e-12)
    assert sum(c * x[j] for j, c in obj.items()) == pytest.approx(prob.objective(values), rel=1e-12)


def test_margin_miss_triggers_refinement(monkeypatch):
    calls = []

    def fake(lowered, cfg):
        calls.append(cfg.abs_tol)
        # first pass lands 1e-6 outside x >= 1, the refined pass on the boundary
        x = 1.0 - 1e-6 if len(calls) == 1 else 1.0
        return "optimal", np.array([x]), {"iterations": 3}

    monkeypatch.setattr(solver_mod, "_run_clarabel", fake)
    sol = solve(scalar_problem())
    assert calls == [1e-8, pytest.approx(1e-10)]
    assert sol.status == OPTIMAL and sol.diagnostics["refined"]


def test_persistent_margin_miss_is_failed(monkeypatch):
    monkeypatch.setattr(solver_mod, "_run_clarabel",
                        lambda lowered, cfg: ("optimal", np.array([0.9]), {}))
    sol = solve(scalar_problem())
    assert sol.status == FAILED and sol.diagnostics["worst_residual"] == pytest.approx(-0.1)
