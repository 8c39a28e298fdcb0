"""Empirical moments, design covariance, Jeffreys regularizer, Lyapunov Gramian."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class NotPositiveDefinite(ValueError):
    pass


class UnstableClosedLoop(ValueError):
    pass


def symmetrize(S) -> np.ndarray:
    S = np.atleast_2d(np.asarray(S, dtype=float))
    return 0.5 * (S + S.T)


def is_pd(S) -> bool:
    """PD test with threshold ``lambda_min > 1e-10 * (1 + lambda_max)``."""
    lam = np.linalg.eigvalsh(symmetrize(S))
    return bool(lam[0] > 1e-10 * (1.0 + abs(lam[-1])))


def is_psd(S, tol: float = 1e-10) -> bool:
    lam = np.linalg.eigvalsh(symmetrize(S))
    return bool(lam[0] >= -tol * (1.0 + abs(lam[-1])))


def require_pd(S, name: str) -> np.ndarray:
    S = symmetrize(S)
    if not is_pd(S):
        raise NotPositiveDefinite(f"{name} is not positive definite")
    return S


def psd_factor(S) -> np.ndarray:
    """``F`` with ``F @ F.T == S`` for a symmetric PSD ``S`` (singular allowed)."""
    S = symmetrize(S)
    lam, U = np.linalg.eigh(S)
    if lam[0] < -1e-10 * (1.0 + abs(lam[-1])):
        raise NotPositiveDefinite("covariance is not positive semidefinite")
    return U * np.sqrt(np.clip(lam, 0.0, None))


@dataclass(frozen=True)
class NoiseSpec:
    """Process noise ``W >= 0`` and input excitation ``V > 0``."""

    W: np.ndarray
    V: np.ndarray

    def __post_init__(self):
        W, V = symmetrize(self.W), symmetrize(self.V)
        if not is_psd(W):
            raise NotPositiveDefinite("W is not positive semidefinite")
        if not is_pd(V):
            raise NotPositiveDefinite("V is not positive definite")
        object.__setattr__(self, "W", W)
        object.__setattr__(self, "V", V)

    def excitation_block(self, r_x: int) -> np.ndarray:
        """``block-diag(0_{r_x}, V)``."""
        r_u = self.V.shape[0]
        out = np.zeros((r_x + r_u, r_x + r_u))
        out[r_x:, r_x:] = self.V
        return out


@dataclass(frozen=True)
class DataSummary:
    Sigma_data: np.ndarray
    H_data: np.ndarray
    M_data: np.ndarray
    count: int

    def __post_init__(self):
        S, M = symmetrize(self.Sigma_data), symmetrize(self.M_data)
        H = np.asarray(self.H_data, dtype=float).reshape(S.shape[0], M.shape[0])
        if self.count < 1:
            raise ValueError("count must be positive")
        object.__setattr__(self, "Sigma_data", S)
        object.__setattr__(self, "M_data", M)
        object.__setattr__(self, "H_data", H)

    @property
    def Gamma_data(self) -> np.ndarray:
        return np.block([[self.Sigma_data, self.H_data], [self.H_data.T, self.M_data]])

    @classmethod
    def nominal(cls, Sigma_data, M_data, H_data=None, count: int = 1) -> "DataSummary":
        S = np.atleast_2d(np.asarray(Sigma_data, float))
        M = np.atleast_2d(np.asarray(M_data, float))
        H = np.zeros((S.shape[0], M.shape[0])) if H_data is None else H_data
        return cls(S, H, M, count)


def summarize(states, inputs) -> DataSummary:
    """Second moments of zero-mean state/input samples, normalized by N."""
    X = np.asarray(states, dtype=float)
    U = np.asarray(inputs, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if U.ndim == 1:
        U = U[:, None]
    if X.shape[0] == 0 or U.shape[0] == 0:
        raise ValueError("summarize needs at least one sample")
    if X.shape[0] != U.shape[0]:
        raise ValueError(f"{X.shape[0]} states but {U.shape[0]} inputs")
    N = X.shape[0]
    return DataSummary(X.T @ X / N, X.T @ U / N, U.T @ U / N, N)


def design_covariance(Sigma, K, V) -> np.ndarray:
    """Stationary covariance of ``[x; u]`` under ``u = K x + v``."""
    Sigma = require_pd(Sigma, "Sigma")
    V = require_pd(V, "V")
    K = np.atleast_2d(np.asarray(K, dtype=float))
    SKt = Sigma @ K.T
    return symmetrize(np.block([[Sigma, SKt], [SKt.T, K @ SKt + V]]))


def jeffreys_objective(Gamma_des, Gamma_data) -> float:
    """``tr(Gamma_data^{-1} Gamma_des) + tr(Gamma_data Gamma_des^{-1})``.

    Bounded below by ``2d``, attained only at ``Gamma_des == Gamma_data``.
    """
    G_des = require_pd(Gamma_des, "Gamma_des")
    G_dat = require_pd(Gamma_data, "Gamma_data")
    if G_des.shape != G_dat.shape:
        raise ValueError("Gamma_des and Gamma_data differ in dimension")
    return float(np.trace(np.linalg.solve(G_dat, G_des)) + np.trace(np.linalg.solve(G_des, G_dat)))


def spectral_radius(M) -> float:
    return float(np.max(np.abs(np.linalg.eigvals(np.atleast_2d(M)))))


def lyapunov_gramian(A, B, K, V, W, tol: float = 1e-9) -> np.ndarray:
    """Stationary state covariance of ``x+ = (A + B K) x + B v + w``.

    Solves ``S = M S M^T + B V B^T + W`` with ``M = A + B K`` through the
    Kronecker system ``(I - M (x) M) vec(S) = vec(N)``.
    """
    A = np.atleast_2d(np.asarray(A, float))
    B = np.asarray(B, float).reshape(A.shape[0], -1)
    K = np.asarray(K, float).reshape(B.shape[1], A.shape[0])
    M = A + B @ K
    rho = spectral_radius(M)
    if rho >= 1.0 - tol:
        raise UnstableClosedLoop(f"unstable closed loop (spectral radius {rho:.6g})")
    N = symmetrize(B @ np.atleast_2d(V) @ B.T + np.atleast_2d(W))
    n = A.shape[0]
    vec = np.linalg.solve(np.eye(n * n) - np.kron(M, M), N.ravel())
    return symmetrize(vec.reshape(n, n))


def relaxed_jeffreys(Sigma, K, V, data: DataSummary) -> float:
    """Trace penalty of the state-input data-conforming program at ``(Sigma, K)``.

    ``tr(Gamma_data^{-1} Gamma_des) + tr(V^{-1} D Sigma D^T) + tr(Sigma_data Sigma^{-1})``
    with ``D = K - H_data^T Sigma_data^{-1}``. Against :func:`jeffreys_objective`
    it drops the constant ``tr(V^{-1} (M_data - P Sigma_data P^T))`` with
    ``P = K - D``, and it weights ``D`` by ``Sigma`` instead of ``Sigma_data``, so the
    two agree up to that constant only when ``Sigma == Sigma_data``.
    """
    Sigma = require_pd(Sigma, "Sigma")
    V = require_pd(V, "V")
    G = design_covariance(Sigma, K, V)
    P = np.linalg.solve(require_pd(data.Sigma_data, "Sigma_data"), data.H_data).T
    D = np.atleast_2d(K) - P
    return float(
        np.trace(np.linalg.solve(require_pd(data.Gamma_data, "Gamma_data"), G))
        + np.trace(np.linalg.solve(V, D @ Sigma @ D.T))
        + np.trace(data.Sigma_data @ np.linalg.inv(Sigma))
    )
