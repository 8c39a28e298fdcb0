"""Robust and data-conforming LQR synthesis for polytopic difference inclusions."""

from .model import (
    BenchmarkPlant,
    DifferenceInclusion,
    VertexSystem,
    benchmark_jacobians,
    benchmark_step,
    load_vertices,
    save_vertices,
    vertices_from_grid,
)
from .statistics import (
    DataSummary,
    NoiseSpec,
    design_covariance,
    jeffreys_objective,
    lyapunov_gramian,
    relaxed_jeffreys,
    summarize,
)
from .sdp import (
    ControllerSolution,
    CostWeights,
    assemble_dc_state,
    assemble_dc_state_input,
    assemble_robust_lqr,
    recover_gain,
    riccati_lqr,
    synthesize,
    verify_certificate,
)
from .solver import Solution, SolverConfig, solve

__version__ = "0.1.0"
