"""Plants, difference inclusions and Jacobian-grid vertex construction."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Protocol, Sequence

import numpy as np


class ModelError(ValueError):
    """Inconsistent dimensions or malformed vertex data."""


class PlantInterface(Protocol):
    """Discrete-time plant ``x+ = f(x, u, w)`` with known Jacobians."""

    dims: tuple[int, int]

    def step(self, x: np.ndarray, u: np.ndarray, w: np.ndarray) -> np.ndarray: ...

    def jacobians(self, x: np.ndarray, u: np.ndarray) -> tuple[np.ndarray, np.ndarray]: ...


def benchmark_step(x, u, w, theta: float = 1 / 6) -> np.ndarray:
    """One step of the scalar-input nonlinear benchmark plant.

    ``x+ = [.98 x1 + .1 x2 + theta x2^2, .95 x2 + (.1 + theta tanh x1) u] + w``
    """
    x1, x2 = float(x[0]), float(x[1])
    u = float(np.asarray(u).reshape(-1)[0])
    return np.array([
        0.98 * x1 + 0.1 * x2 + theta * x2 * x2 + w[0],
        0.95 * x2 + (0.1 + theta * math.tanh(x1)) * u + w[1],
    ])


def benchmark_jacobians(x, u, theta: float = 1 / 6) -> tuple[np.ndarray, np.ndarray]:
    x1, x2 = float(x[0]), float(x[1])
    u = float(np.asarray(u).reshape(-1)[0])
    t = math.tanh(x1)
    A = np.array([
        [0.98, 0.1 + 2.0 * theta * x2],
        [theta * (1.0 - t * t) * u, 0.95],
    ])
    B = np.array([[0.0], [0.1 + theta * t]])
    return A, B


@dataclass(frozen=True)
class BenchmarkPlant:
    theta: float = 1 / 6
    dims: tuple[int, int] = (2, 1)

    def step(self, x, u, w) -> np.ndarray:
        return benchmark_step(x, u, w, self.theta)

    def jacobians(self, x, u) -> tuple[np.ndarray, np.ndarray]:
        return benchmark_jacobians(x, u, self.theta)


@dataclass(frozen=True)
class LinearPlant:
    """``x+ = A x + B u + w``; handy for tests and user-supplied models."""

    A: np.ndarray
    B: np.ndarray

    @property
    def dims(self) -> tuple[int, int]:
        return self.B.shape

    def step(self, x, u, w) -> np.ndarray:
        return self.A @ np.asarray(x, float) + self.B @ np.atleast_1d(u) + np.asarray(w, float)

    def jacobians(self, x, u):
        return self.A, self.B


@dataclass(frozen=True)
class VertexSystem:
    A: np.ndarray
    B: np.ndarray

    def __post_init__(self):
        A = np.array(self.A, dtype=float, ndmin=2)
        B = np.array(self.B, dtype=float, ndmin=2)
        if A.ndim != 2 or A.shape[0] != A.shape[1]:
            raise ModelError(f"A must be square, got shape {A.shape}")
        if B.ndim != 2 or B.shape[0] != A.shape[0]:
            raise ModelError(f"B has {B.shape[0]} rows but A is {A.shape[0]}x{A.shape[1]}")
        A.setflags(write=False)
        B.setflags(write=False)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)


@dataclass(frozen=True)
class DifferenceInclusion:
    vertices: tuple[VertexSystem, ...]

    def __post_init__(self):
        verts = tuple(
            v if isinstance(v, VertexSystem) else VertexSystem(*v) for v in self.vertices
        )
        if not verts:
            raise ModelError("a difference inclusion needs at least one vertex")
        shape = (verts[0].A.shape, verts[0].B.shape)
        for i, v in enumerate(verts):
            if (v.A.shape, v.B.shape) != shape:
                raise ModelError(
                    f"vertex {i} has shapes {v.A.shape}/{v.B.shape}, expected {shape[0]}/{shape[1]}"
                )
        object.__setattr__(self, "vertices", verts)

    @property
    def r_x(self) -> int:
        return self.vertices[0].B.shape[0]

    @property
    def r_u(self) -> int:
        return self.vertices[0].B.shape[1]

    def __len__(self) -> int:
        return len(self.vertices)

    def __iter__(self):
        return iter(self.vertices)


def vertices_from_grid(plant: PlantInterface, grid: Iterable[tuple]) -> DifferenceInclusion:
    """Evaluate the plant Jacobians at each ``(x, u)`` grid point, in order."""
    r_x, r_u = plant.dims
    verts = []
    for i, (x, u) in enumerate(grid):
        x = np.atleast_1d(np.asarray(x, dtype=float))
        u = np.atleast_1d(np.asarray(u, dtype=float))
        if x.shape != (r_x,) or u.shape != (r_u,):
            raise ModelError(
                f"grid point {i}: expected state of length {r_x} and input of length {r_u}, "
                f"got {x.shape} and {u.shape}"
            )
        verts.append(VertexSystem(*plant.jacobians(x, u)))
    if not verts:
        raise ModelError("empty grid")
    return DifferenceInclusion(tuple(verts))


def _matrix(obj, rows: int, cols: int, what: str) -> np.ndarray:
    if not isinstance(obj, list) or len(obj) != rows:
        raise ModelError(f"{what}: expected {rows} rows")
    for r, row in enumerate(obj):
        if not isinstance(row, list) or len(row) != cols:
            raise ModelError(f"{what}: row {r} must have {cols} entries")
        if not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in row):
            raise ModelError(f"{what}: row {r} has non-numeric entries")
    return np.array(obj, dtype=float)


def parse_vertices(doc: dict) -> DifferenceInclusion:
    try:
        r_x, r_u = int(doc["r_x"]), int(doc["r_u"])
        entries = doc["vertices"]
    except (KeyError, TypeError, ValueError) as exc:
        raise ModelError(f"vertex file needs r_x, r_u and vertices: {exc}") from None
    if r_x < 1 or r_u < 1:
        raise ModelError("r_x and r_u must be positive")
    if not isinstance(entries, list) or not entries:
        raise ModelError("vertices must be a nonempty list")
    verts = []
    for i, entry in enumerate(entries):
        if not isinstance(entry, dict) or "A" not in entry or "B" not in entry:
            raise ModelError(f"vertex {i}: expected an object with A and B")
        A = _matrix(entry["A"], r_x, r_x, f"vertex {i} A")
        B = _matrix(entry["B"], r_x, r_u, f"vertex {i} B")
        verts.append(VertexSystem(A, B))
    return DifferenceInclusion(tuple(verts))


def load_vertices(path) -> DifferenceInclusion:
    """Read a JSON vertex file (see README for the schema)."""
    text = Path(path).read_text()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ModelError(f"{path}: not valid JSON ({exc})") from None
    return parse_vertices(doc)


def save_vertices(inc: DifferenceInclusion, path) -> None:
    doc = {
        "r_x": inc.r_x,
        "r_u": inc.r_u,
        "vertices": [{"A": v.A.tolist(), "B": v.B.tolist()} for v in inc.vertices],
    }
    Path(path).write_text(json.dumps(doc, indent=1) + "\n")


def grid_points(states: Sequence, inputs: Sequence) -> list[tuple[np.ndarray, np.ndarray]]:
    return [(np.asarray(x), np.atleast_1d(u)) for x, u in zip(states, inputs)]
