"""Symbolic description of small semidefinite programs.

Matrix variables are combined into affine matrix expressions of the form

    C + sum_t  L_t @ X_t @ R_t      (or L_t @ X_t.T @ R_t)

which is enough to write every LMI block used in the synthesis problems.
An :class:`SdpProblem` is a plain immutable value; lowering to a conic
solver lives in :mod:`dclqr.solver`.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np


class ProblemError(ValueError):
    """Raised for malformed problem descriptions."""


@dataclass(frozen=True)
class Variable:
    name: str
    shape: tuple[int, int]
    symmetric: bool = False

    def __post_init__(self):
        rows, cols = self.shape
        if rows < 1 or cols < 1:
            raise ProblemError(f"variable {self.name!r} has empty shape {self.shape}")
        if self.symmetric and rows != cols:
            raise ProblemError(f"symmetric variable {self.name!r} must be square")

    @property
    def size(self) -> int:
        """Number of scalar unknowns."""
        n, m = self.shape
        return n * (n + 1) // 2 if self.symmetric else n * m

    def basis(self):
        """Yield the coordinate matrices spanning this variable's space.

        Symmetric variables use ``E_ij + E_ji`` (``i > j``) and ``E_ii``,
        in row-major lower-triangle order; rectangular ones use ``E_ij``.
        """
        n, m = self.shape
        if self.symmetric:
            for i in range(n):
                for j in range(i + 1):
                    E = np.zeros((n, n))
                    E[i, j] = E[j, i] = 1.0
                    yield E
        else:
            for i in range(n):
                for j in range(m):
                    E = np.zeros((n, m))
                    E[i, j] = 1.0
                    yield E

    def unpack(self, coords: np.ndarray) -> np.ndarray:
        """Rebuild the matrix from its coordinate vector."""
        coords = np.asarray(coords, dtype=float)
        n, m = self.shape
        if self.symmetric:
            X = np.zeros((n, n))
            X[np.tril_indices(n)] = coords
            return X + np.tril(X, -1).T
        return coords.reshape(n, m)

    def pack(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if self.symmetric:
            return X[np.tril_indices(self.shape[0])].copy()
        return X.ravel().copy()

    @property
    def expr(self) -> "Affine":
        n, m = self.shape
        return Affine(np.zeros((n, m)), (_Term(self.name, np.eye(n), np.eye(m)),))


@dataclass(frozen=True)
class _Term:
    var: str
    left: np.ndarray
    right: np.ndarray
    transpose: bool = False

    def apply(self, X: np.ndarray) -> np.ndarray:
        return self.left @ (X.T if self.transpose else X) @ self.right


def _as_matrix(value) -> np.ndarray:
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        arr = arr.reshape(-1, 1)
    return arr


@dataclass(frozen=True)
class Affine:
    """Affine matrix-valued expression in the problem variables."""

    const: np.ndarray
    terms: tuple[_Term, ...] = ()

    # let ndarray @ Affine dispatch to __rmatmul__
    __array_ufunc__ = None

    @property
    def shape(self) -> tuple[int, int]:
        return self.const.shape

    @staticmethod
    def constant(value) -> "Affine":
        return Affine(_as_matrix(value))

    def _coerce(self, other) -> "Affine":
        if isinstance(other, Affine):
            return other
        return Affine.constant(other)

    def __add__(self, other) -> "Affine":
        other = self._coerce(other)
        if other.shape != self.shape:
            raise ProblemError(f"shape mismatch in sum: {self.shape} vs {other.shape}")
        return Affine(self.const + other.const, self.terms + other.terms)

    __radd__ = __add__

    def __neg__(self) -> "Affine":
        return Affine(
            -self.const,
            tuple(_Term(t.var, -t.left, t.right, t.transpose) for t in self.terms),
        )

    def __sub__(self, other) -> "Affine":
        return self + (-self._coerce(other))

    def __rsub__(self, other) -> "Affine":
        return self._coerce(other) + (-self)

    def __mul__(self, scalar: float) -> "Affine":
        s = float(scalar)
        return Affine(
            s * self.const,
            tuple(_Term(t.var, s * t.left, t.right, t.transpose) for t in self.terms),
        )

    __rmul__ = __mul__

    def __rmatmul__(self, M) -> "Affine":
        M = _as_matrix(M)
        return Affine(
            M @ self.const,
            tuple(_Term(t.var, M @ t.left, t.right, t.transpose) for t in self.terms),
        )

    def __matmul__(self, M) -> "Affine":
        if isinstance(M, Affine):
            raise ProblemError("product of two affine expressions is not affine")
        M = _as_matrix(M)
        return Affine(
            self.const @ M,
            tuple(_Term(t.var, t.left, t.right @ M, t.transpose) for t in self.terms),
        )

    @property
    def T(self) -> "Affine":
        # (L X R)^T = R^T X^T L^T
        return Affine(
            self.const.T.copy(),
            tuple(_Term(t.var, t.right.T, t.left.T, not t.transpose) for t in self.terms),
        )

    def variables(self) -> set[str]:
        return {t.var for t in self.terms}

    def linear_part(self, var: str, X: np.ndarray) -> np.ndarray:
        """Contribution of ``var = X`` with every other variable at zero."""
        out = np.zeros(self.shape)
        for t in self.terms:
            if t.var == var:
                out += t.apply(X)
        return out

    def evaluate(self, values: Mapping[str, np.ndarray]) -> np.ndarray:
        out = self.const.copy()
        for t in self.terms:
            out += t.apply(np.asarray(values[t.var], dtype=float))
        return out


def bmat(blocks: Sequence[Sequence]) -> Affine:
    """Assemble a block matrix from affine expressions and constants.

    ``None`` entries are zero blocks; each block row must contain at least
    one entry with a known shape, and likewise for each block column.
    """
    nr, nc = len(blocks), len(blocks[0])
    if any(len(row) != nc for row in blocks):
        raise ProblemError("ragged block layout")
    heights = [None] * nr
    widths = [None] * nc
    for i, row in enumerate(blocks):
        for j, b in enumerate(row):
            if b is None:
                continue
            shape = b.shape if isinstance(b, Affine) else _as_matrix(b).shape
            for dims, k, v in ((heights, i, shape[0]), (widths, j, shape[1])):
                if dims[k] is None:
                    dims[k] = v
                elif dims[k] != v:
                    raise ProblemError(f"incompatible block sizes at ({i}, {j})")
    if None in heights or None in widths:
        raise ProblemError("cannot infer size of an all-zero block row/column")
    H, Wd = sum(heights), sum(widths)
    r_off = np.cumsum([0] + heights)
    c_off = np.cumsum([0] + widths)
    out = Affine(np.zeros((H, Wd)))
    for i, row in enumerate(blocks):
        Ei = np.zeros((H, heights[i]))
        Ei[r_off[i]:r_off[i + 1], :] = np.eye(heights[i])
        for j, b in enumerate(row):
            if b is None:
                continue
            Fj = np.zeros((widths[j], Wd))
            Fj[:, c_off[j]:c_off[j + 1]] = np.eye(widths[j])
            b = b if isinstance(b, Affine) else Affine.constant(b)
            out = out + Ei @ b @ Fj
    return out


@dataclass(frozen=True)
class CostTerm:
    """``coef * tr(C X)`` (or ``tr(C X^T)`` when ``transpose``)."""

    C: np.ndarray
    var: str
    transpose: bool = False

    def evaluate(self, X: np.ndarray) -> float:
        X = X.T if self.transpose else X
        return float(np.sum(self.C.T * X))


@dataclass(frozen=True)
class LMI:
    """Constraint ``expr - margin * I >= 0`` in the semidefinite order."""

    name: str
    expr: Affine
    margin: float = 0.0

    @property
    def size(self) -> int:
        return self.expr.shape[0]

    def residual(self, values: Mapping[str, np.ndarray]) -> float:
        """Minimum eigenvalue of the (margin-shifted) block at ``values``."""
        M = self.expr.evaluate(values) - self.margin * np.eye(self.size)
        return float(np.linalg.eigvalsh(0.5 * (M + M.T))[0])


@dataclass(frozen=True)
class SdpProblem:
    variables: tuple[Variable, ...]
    cost: tuple[CostTerm, ...]
    constraints: tuple[LMI, ...]
    cost_constant: float = 0.0
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        names = [v.name for v in self.variables]
        if len(set(names)) != len(names):
            raise ProblemError("duplicate variable names")
        known = set(names)
        used = set()
        for term in self.cost:
            if term.var not in known:
                raise ProblemError(f"cost refers to unknown variable {term.var!r}")
            used.add(term.var)
        for con in self.constraints:
            n, m = con.expr.shape
            if n != m:
                raise ProblemError(f"LMI {con.name!r} is not square")
            unknown = con.expr.variables() - known
            if unknown:
                raise ProblemError(f"LMI {con.name!r} refers to unknown {sorted(unknown)}")
            used |= con.expr.variables()
            self._check_symmetric(con)
        unused = known - used
        if unused:
            raise ProblemError(f"variables never used: {sorted(unused)}")

    def _check_symmetric(self, con: LMI):
        c = con.expr.const
        bad = not np.allclose(c, c.T, atol=1e-12)
        for var in self.variables:
            if bad or var.name not in con.expr.variables():
                continue
            for E in var.basis():
                F = con.expr.linear_part(var.name, E)
                if not np.allclose(F, F.T, atol=1e-12):
                    bad = True
                    break
        if bad:
            raise ProblemError(f"LMI {con.name!r} is not symmetric")

    def variable(self, name: str) -> Variable:
        for v in self.variables:
            if v.name == name:
                return v
        raise KeyError(name)

    def objective(self, values: Mapping[str, np.ndarray]) -> float:
        return self.cost_constant + sum(
            t.evaluate(np.asarray(values[t.var], dtype=float)) for t in self.cost
        )

    def residuals(self, values: Mapping[str, np.ndarray]) -> dict[str, float]:
        return {con.name: con.residual(values) for con in self.constraints}
