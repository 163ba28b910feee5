"""Mean-square stability of the loop with Bernoulli command drops."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq

from .channel import FblParams, ctrl_drop_probability
from .errors import InfeasibleLinkError, NoThresholdError, UnstableError


@dataclass(frozen=True)
class StabilityMatrix:
    M: np.ndarray
    eps_ctrl: float
    closed_loop_matrix: np.ndarray


@dataclass(frozen=True)
class StabilityReport:
    spectral_radius: float
    eps_star: float
    alpha_ctrl_star: float
    steady_state_cov: np.ndarray | None = None


def vec(x: np.ndarray) -> np.ndarray:
    """Column-stacking vectorization (so vec(AXB^T) = (B kron A) vec(X))."""
    return np.asarray(x).reshape(-1, order="F")


def unvec(v: np.ndarray, n: int) -> np.ndarray:
    return np.asarray(v).reshape((n, n), order="F")


def build_stability_matrix(A, B, K, eps: float) -> StabilityMatrix:
    """M = (1-eps) F kron F + eps A kron A with F = A - B K."""
    if not 0.0 <= eps <= 1.0:
        raise ValueError("eps must lie in [0, 1]")
    A = np.asarray(A, dtype=float)
    f = A - np.asarray(B, dtype=float) @ np.asarray(K, dtype=float)
    return StabilityMatrix((1.0 - eps) * np.kron(f, f) + eps * np.kron(A, A), float(eps), f)


def spectral_radius(M) -> float:
    m = M.M if isinstance(M, StabilityMatrix) else np.asarray(M, dtype=float)
    if m.size == 0:
        return 0.0
    return float(np.max(np.abs(np.linalg.eigvals(m))))


def _rho(A, B, K, eps):
    return spectral_radius(build_stability_matrix(A, B, K, eps))


def critical_eps(A, B, K, tol: float = 1e-5) -> float:
    """Smallest drop rate at which rho(M) reaches one."""
    if _rho(A, B, K, 0.0) >= 1.0:
        raise NoThresholdError("loop is not mean-square stable even without drops")
    lo, hi = 0.0, None
    step = 1e-3
    e = step
    while e < 1.0:
        if _rho(A, B, K, e) >= 1.0:
            hi = e
            break
        lo = e
        step *= 2.0
        e = min(1.0, lo + step)
    if hi is None:
        if _rho(A, B, K, 1.0) >= 1.0 - 1e-12:
            hi = 1.0
        else:
            raise NoThresholdError("rho(M) stays below one on [0, 1]")
    # refine the scan bracket before bisection so the first crossing is kept
    grid = np.linspace(lo, hi, 33)
    vals = [_rho(A, B, K, g) for g in grid]
    for i in range(1, len(grid)):
        if vals[i] >= 1.0:
            lo, hi = grid[i - 1], grid[i]
            break
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if _rho(A, B, K, mid) >= 1.0:
            hi = mid
        else:
            lo = mid
    return 0.5 * (lo + hi)


def critical_alpha_ctrl(eps_star: float, avg_gamma: float, bandwidth_hz: float,
                        fbl: FblParams, tol: float = 1e-10) -> float:
    """Control fraction whose average drop rate equals ``eps_star``."""
    def gap(log_alpha):
        return ctrl_drop_probability(math.exp(log_alpha), avg_gamma, bandwidth_hz, fbl) - eps_star

    lo, hi = math.log(1e-12), 0.0
    if gap(hi) > 0:
        raise InfeasibleLinkError("drop rate exceeds the threshold even with all resources")
    if gap(lo) <= 0:
        return math.exp(lo)
    root = brentq(gap, lo, hi, xtol=tol, rtol=4 * np.finfo(float).eps, maxiter=500)
    return math.exp(root)


def steady_state_covariance(M, Sigma_tilde_omega) -> np.ndarray:
    m = M.M if isinstance(M, StabilityMatrix) else np.asarray(M, dtype=float)
    if spectral_radius(m) >= 1.0:
        raise UnstableError("steady-state covariance requested for an unstable loop")
    sig = np.asarray(Sigma_tilde_omega, dtype=float)
    n = sig.shape[0]
    out = unvec(np.linalg.solve(np.eye(n * n) - m, vec(sig)), n)
    return 0.5 * (out + out.T)


def stability_report(A, B, K, eps_bar: float, avg_gamma: float, bandwidth_hz: float,
                     fbl: FblParams, Sigma_tilde_omega=None) -> StabilityReport:
    sm = build_stability_matrix(A, B, K, eps_bar)
    rho = spectral_radius(sm)
    eps_star = critical_eps(A, B, K)
    alpha_star = critical_alpha_ctrl(eps_star, avg_gamma, bandwidth_hz, fbl)
    cov = None
    if rho < 1.0 and Sigma_tilde_omega is not None:
        cov = steady_state_covariance(sm, Sigma_tilde_omega)
    return StabilityReport(rho, eps_star, alpha_star, cov)
