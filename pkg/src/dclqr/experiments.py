"""Benchmark pipeline: grid sampling, synthesis, simulation and the stability study.

Seeding scheme
--------------
A repetition keyed by ``seed`` (an int or a tuple such as
``(master_seed, r)``) builds ``numpy.random.SeedSequence(seed)`` and
spawns three children, in order: grid sampling, initial state, and
simulation noise. The noise child yields a 64-bit seed for
:func:`dclqr.simulation.simulate_closed_loop`. All controllers within a
repetition share the grid, the initial state and the noise stream.
"""

from __future__ import annotations

import csv
import json
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Sequence

import numpy as np

from .model import BenchmarkPlant, DifferenceInclusion, load_vertices, vertices_from_grid
from .sdp import CostWeights, SynthesisError, riccati_lqr, synthesize
from .simulation import SimConfig, Trajectory, parameter_trajectory, simulate_closed_loop
from .solver import USABLE, SolverConfig
from .statistics import DataSummary, NoiseSpec, psd_factor, summarize

log = logging.getLogger(__name__)

CONTROLLERS = ("lqr", "robust", "dc")
_SYNTHESIS_METHOD = {"robust": "robust", "dc": "dc-state-input"}


class ConfigError(ValueError):
    pass


def _mat(value, shape: tuple[int, int], name: str) -> np.ndarray:
    try:
        arr = np.array(value, dtype=float)
    except (TypeError, ValueError):
        raise ConfigError(f"{name}: not a numeric array") from None
    if arr.ndim == 0 and shape == (1, 1):
        arr = arr.reshape(1, 1)
    if arr.shape != shape:
        raise ConfigError(f"{name}: expected shape {shape}, got {arr.shape}")
    return arr


@dataclass(frozen=True)
class ExperimentConfig:
    theta: float = 1 / 6
    grid_count: int = 500
    grid_state_cov: tuple = ((0.5, 0.0), (0.0, 0.5))
    grid_input_cov: tuple = ((0.5,),)
    grid_cross_cov: tuple = ((0.0,), (0.0,))
    Q: tuple = ((1.0, 0.0), (0.0, 0.5))
    R: tuple = ((1.0,),)
    V: tuple = ((0.05,),)
    W: tuple = ((0.2, 0.0), (0.0, 0.1))
    gamma: float = 10.0
    gamma_prime: float = 10.0
    horizon: int = 500
    threshold: float = 100.0
    repetitions: int = 1000
    master_seed: int = 0
    x0_cov: tuple | None = None  # defaults to grid_state_cov
    vertices_file: str | None = None
    solver_abs_tol: float = 1e-8
    solver_rel_tol: float = 1e-8
    solver_max_iterations: int = 5000
    solver_backend: str = "clarabel"

    def __post_init__(self):
        r_x, r_u = 2, 1
        shapes = {
            "grid_state_cov": (r_x, r_x), "grid_input_cov": (r_u, r_u),
            "grid_cross_cov": (r_x, r_u), "Q": (r_x, r_x), "R": (r_u, r_u),
            "V": (r_u, r_u), "W": (r_x, r_x),
        }
        if self.x0_cov is not None:
            shapes["x0_cov"] = (r_x, r_x)
        for name, shape in shapes.items():
            arr = _mat(getattr(self, name), shape, name)
            object.__setattr__(self, name, tuple(map(tuple, arr.tolist())))
        if self.grid_count < 1:
            raise ConfigError("grid_count must be >= 1")
        if self.repetitions < 1:
            raise ConfigError("repetitions must be >= 1")
        if self.horizon < 1 or self.threshold <= 0:
            raise ConfigError("horizon must be >= 1 and threshold > 0")
        if self.gamma < 0 or self.gamma_prime < 0:
            raise ConfigError("regularization weights must be nonnegative")
        try:
            self.weights
            self.noise
            psd_factor(self.joint_grid_cov)
            if self.x0_cov is not None:
                psd_factor(np.array(self.x0_cov))
            self.solver
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    # derived views -------------------------------------------------------
    @property
    def weights(self) -> CostWeights:
        return CostWeights(np.array(self.Q), np.array(self.R))

    @property
    def noise(self) -> NoiseSpec:
        return NoiseSpec(np.array(self.W), np.array(self.V))

    @property
    def joint_grid_cov(self) -> np.ndarray:
        S, H, M = (np.array(v) for v in (self.grid_state_cov, self.grid_cross_cov, self.grid_input_cov))
        return np.block([[S, H], [H.T, M]])

    @property
    def solver(self) -> SolverConfig:
        return SolverConfig(self.solver_abs_tol, self.solver_rel_tol,
                            self.solver_max_iterations, backend=self.solver_backend)

    @property
    def plant(self) -> BenchmarkPlant:
        return BenchmarkPlant(self.theta)

    def nominal_data(self) -> DataSummary:
        return DataSummary(np.array(self.grid_state_cov), np.array(self.grid_cross_cov),
                           np.array(self.grid_input_cov), self.grid_count)

    # (de)serialization ---------------------------------------------------
    def to_dict(self) -> dict:
        return {k: (list(map(list, v)) if isinstance(v, tuple) else v)
                for k, v in asdict(self).items()}

    @classmethod
    def from_dict(cls, doc: dict) -> "ExperimentConfig":
        if not isinstance(doc, dict):
            raise ConfigError("config must be a JSON object")
        known = {f.name for f in fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise ConfigError(f"unknown config fields: {sorted(unknown)}")
        try:
            return cls(**doc)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        try:
            doc = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from None
        return cls.from_dict(doc)

    def replace(self, **changes) -> "ExperimentConfig":
        doc = self.to_dict()
        doc.update(changes)
        return ExperimentConfig.from_dict(doc)


def sample_grid(rng: np.random.Generator, n: int, joint_cov: np.ndarray, r_x: int
                ) -> tuple[np.ndarray, np.ndarray]:
    """Draw ``n`` zero-mean Gaussian ``(x, u)`` grid points."""
    z = rng.standard_normal((n, joint_cov.shape[0]))
    samples = z @ psd_factor(joint_cov).T
    return samples[:, :r_x], samples[:, r_x:]


def _streams(seed) -> tuple[np.random.Generator, np.random.Generator, int]:
    grid_ss, x0_ss, noise_ss = np.random.SeedSequence(seed).spawn(3)
    noise_seed = int(noise_ss.generate_state(1, np.uint64)[0])
    return np.random.default_rng(grid_ss), np.random.default_rng(x0_ss), noise_seed


@dataclass
class ControllerRun:
    name: str
    status: str
    K: np.ndarray | None = None
    trajectory: Trajectory | None = None
    parameters: list = field(default_factory=list)

    @property
    def stable(self) -> bool:
        return self.trajectory is not None and self.trajectory.stable


@dataclass
class ExperimentResult:
    seed: object
    grid_states: np.ndarray
    grid_inputs: np.ndarray
    inclusion: DifferenceInclusion
    data: DataSummary
    controllers: dict


def build_inclusion(cfg: ExperimentConfig, grid_rng: np.random.Generator):
    """Vertices and data summary for one repetition.

    With ``vertices_file`` set, the file replaces the sampled grid and the
    nominal grid covariances stand in for the data moments.
    """
    if cfg.vertices_file:
        inc = load_vertices(cfg.vertices_file)
        return inc, cfg.nominal_data(), np.empty((0, 2)), np.empty((0, 1))
    xs, us = sample_grid(grid_rng, cfg.grid_count, cfg.joint_grid_cov, 2)
    inc = vertices_from_grid(cfg.plant, zip(xs, us))
    return inc, summarize(xs, us), xs, us


def origin_lqr(cfg: ExperimentConfig) -> np.ndarray:
    A0, B0 = cfg.plant.jacobians(np.zeros(2), np.zeros(1))
    return riccati_lqr(A0, B0, cfg.weights)


def run_single_experiment(cfg: ExperimentConfig, seed, controllers: Sequence[str] = CONTROLLERS
                          ) -> ExperimentResult:
    grid_rng, x0_rng, noise_seed = _streams(seed)
    inc, data, xs, us = build_inclusion(cfg, grid_rng)
    x0_cov = np.array(cfg.x0_cov if cfg.x0_cov is not None else cfg.grid_state_cov)
    x0 = psd_factor(x0_cov) @ x0_rng.standard_normal(2)
    sim_cfg = SimConfig(np.array(cfg.W), np.array(cfg.V), cfg.horizon, cfg.threshold, noise_seed)
    plant = cfg.plant

    runs = {}
    for name in controllers:
        if name == "lqr":
            try:
                K, status = origin_lqr(cfg), "optimal"
            except SynthesisError as exc:
                log.warning("seed %s: LQR baseline failed: %s", seed, exc)
                K, status = None, "failed"
        else:
            sol = synthesize(_SYNTHESIS_METHOD[name], inc, cfg.weights, cfg.noise, data,
                             gamma=cfg.gamma, gamma_prime=cfg.gamma_prime, cfg=cfg.solver)
            K, status = sol.K, sol.status
            if not sol.usable:
                log.info("seed %s: %s synthesis %s", seed, name, status)
        run = ControllerRun(name, status, K)
        if K is not None:
            run.trajectory = simulate_closed_loop(plant, K, x0, sim_cfg)
            run.parameters = parameter_trajectory(plant, run.trajectory)
        runs[name] = run
    return ExperimentResult(seed, xs, us, inc, data, runs)


@dataclass
class MonteCarloReport:
    controllers: dict
    repetitions: list
    config: dict
    master_seed: int
    elapsed_seconds: float = field(default=0.0, compare=False)

    def to_dict(self) -> dict:
        # wall-clock time is left out so identical seeds give identical bytes
        return {
            "master_seed": self.master_seed,
            "config": self.config,
            "controllers": self.controllers,
            "repetitions": self.repetitions,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


def _one_repetition(args) -> dict:
    cfg, r = args
    res = run_single_experiment(cfg, (cfg.master_seed, r))
    return {
        "rep": r,
        "status": {name: run.status for name, run in res.controllers.items()},
        "stable": {name: run.stable for name, run in res.controllers.items()},
        "first_violation": {
            name: (run.trajectory.first_violation if run.trajectory is not None else None)
            for name, run in res.controllers.items()
        },
    }


def aggregate(rows: list, controllers: Sequence[str] = CONTROLLERS) -> dict:
    out = {}
    for name in controllers:
        total = len(rows)
        failed = sum(1 for row in rows if row["status"][name] not in USABLE)
        stable = sum(1 for row in rows if row["stable"][name])
        unstable = total - stable - failed
        feasible = total - failed
        out[name] = {
            "stable_count": stable,
            "unstable_count": unstable,
            "failed_count": failed,
            "total": total,
            # synthesis failures count as unstable here ...
            "percentage": 100.0 * stable / total,
            # ... and are dropped from the denominator here
            "percentage_excluding_failed": (100.0 * stable / feasible) if feasible else None,
        }
    return out


def run_monte_carlo(cfg: ExperimentConfig, workers: int = 1, progress=None) -> MonteCarloReport:
    """Repeat the full pipeline ``cfg.repetitions`` times.

    Repetition ``r`` uses seed ``(master_seed, r)``; results are gathered in
    repetition order, so the report does not depend on ``workers``.
    """
    t0 = time.perf_counter()
    jobs = [(cfg, r) for r in range(cfg.repetitions)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_one_repetition, jobs))
    else:
        rows = []
        for job in jobs:
            rows.append(_one_repetition(job))
            if progress is not None:
                progress(len(rows), len(jobs))
    rows.sort(key=lambda row: row["rep"])
    for row in rows:
        for name, status in row["status"].items():
            if status not in USABLE:
                log.info("rep %d: %s synthesis %s (counted unstable)", row["rep"], name, status)
    elapsed = time.perf_counter() - t0
    log.info("Monte Carlo: %d repetitions in %.1f s", cfg.repetitions, elapsed)
    return MonteCarloReport(aggregate(rows), rows, cfg.to_dict(), cfg.master_seed, elapsed)


def scatter_rows(result: ExperimentResult) -> list[tuple[str, float, float]]:
    """``(label, A[0, 1], B[1, 0])`` for the grid and each simulated controller."""
    rows = [("grid", float(v.A[0, 1]), float(v.B[1, 0])) for v in result.inclusion.vertices]
    for name, run in result.controllers.items():
        rows += [(name, float(A[0, 1]), float(B[1, 0])) for A, B in run.parameters]
    return rows


def emit_scatter(result: ExperimentResult, path) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["label", "a12", "b21"])
        for label, a12, b21 in scatter_rows(result):
            writer.writerow([label, repr(a12), repr(b21)])
    return path
