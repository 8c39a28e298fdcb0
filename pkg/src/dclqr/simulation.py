"""Stochastic closed-loop simulation under ``u = K x + v``.

Noise generation is fixed so runs are reproducible: a
``numpy.random.Generator(PCG64(seed))`` draws one ``(horizon, r_x)``
block of standard normals for the process noise and then one
``(horizon, r_u)`` block for the excitation (numpy's ziggurat sampler).
They are coloured with symmetric PSD square-root factors of ``W`` and
``V`` (eigendecomposition), so singular covariances are allowed.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .model import PlantInterface
from .statistics import psd_factor, symmetrize


@dataclass(frozen=True)
class SimConfig:
    W: np.ndarray
    V: np.ndarray
    horizon: int = 500
    threshold: float = 100.0
    seed: int = 0

    def __post_init__(self):
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if self.threshold <= 0:
            raise ValueError("threshold must be positive")
        object.__setattr__(self, "W", symmetrize(self.W))
        object.__setattr__(self, "V", symmetrize(self.V))


@dataclass(frozen=True)
class Trajectory:
    states: np.ndarray  # (len(inputs) + 1, r_x)
    inputs: np.ndarray  # (steps, r_u)
    process_noise: np.ndarray  # w_k, (steps, r_x)
    excitation: np.ndarray  # v_k, (steps, r_u)
    stable: bool
    first_violation: int | None = None
    meta: dict = field(default_factory=dict, compare=False)


def noise_streams(seed: int, horizon: int, W, V) -> tuple[np.ndarray, np.ndarray]:
    rng = np.random.Generator(np.random.PCG64(seed))
    W, V = symmetrize(W), symmetrize(V)
    zw = rng.standard_normal((horizon, W.shape[0]))
    zv = rng.standard_normal((horizon, V.shape[0]))
    return zw @ psd_factor(W).T, zv @ psd_factor(V).T


def _violates(x: np.ndarray, threshold: float) -> bool:
    return not np.all(np.isfinite(x)) or float(np.max(np.abs(x))) >= threshold


def simulate_closed_loop(plant: PlantInterface, K, x0, cfg: SimConfig) -> Trajectory:
    """Run ``x+ = f(x, K x + v, w)`` for ``cfg.horizon`` steps.

    Stops at the first state with ``max|x| >= threshold`` (or a non-finite
    entry); that step index is ``first_violation``. No clamping.
    """
    r_x, r_u = plant.dims
    K = np.asarray(K, dtype=float).reshape(r_u, r_x)
    x = np.asarray(x0, dtype=float).reshape(r_x)
    w_all, v_all = noise_streams(cfg.seed, cfg.horizon, cfg.W, cfg.V)

    states = [x]
    inputs = []
    first_violation = 0 if _violates(x, cfg.threshold) else None
    if first_violation is None:
        for k in range(cfg.horizon):
            u = K @ x + v_all[k]
            with np.errstate(over="ignore", invalid="ignore"):
                x = np.asarray(plant.step(x, u, w_all[k]), dtype=float)
            inputs.append(u)
            states.append(x)
            if _violates(x, cfg.threshold):
                first_violation = k + 1
                break
    steps = len(inputs)
    return Trajectory(
        states=np.array(states),
        inputs=np.array(inputs).reshape(steps, r_u),
        process_noise=w_all[:steps],
        excitation=v_all[:steps],
        stable=first_violation is None,
        first_violation=first_violation,
    )


def parameter_trajectory(plant: PlantInterface, traj: Trajectory) -> list[tuple[np.ndarray, np.ndarray]]:
    """Jacobians along the recorded trajectory, one per applied input."""
    return [plant.jacobians(traj.states[k], traj.inputs[k]) for k in range(len(traj.inputs))]


def write_trajectory_csv(traj: Trajectory, path, metadata: dict | None = None) -> Path:
    """Write ``k, x_1.., u_1..`` rows plus a ``<path>.meta.json`` sidecar.

    The final state has no input; its ``u`` cells are left empty.
    """
    path = Path(path)
    r_x = traj.states.shape[1]
    r_u = traj.inputs.shape[1]
    header = ["k"] + [f"x_{i + 1}" for i in range(r_x)] + [f"u_{j + 1}" for j in range(r_u)]
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for k, x in enumerate(traj.states):
            u = [repr(float(v)) for v in traj.inputs[k]] if k < len(traj.inputs) else [""] * r_u
            writer.writerow([k] + [repr(float(v)) for v in x] + u)
    sidecar = {
        "stable": traj.stable,
        "first_violation": traj.first_violation,
        "steps": int(len(traj.inputs)),
    }
    sidecar.update(metadata or {})
    meta_path = path.with_name(path.name + ".meta.json")
    meta_path.write_text(json.dumps(sidecar, indent=2, sort_keys=True) + "\n")
    return meta_path
