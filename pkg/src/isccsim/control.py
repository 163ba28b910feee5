"""LQG synthesis, empirical LQG cost, and the rate-cost function L(b)."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_discrete_are

from .errors import ConvergenceError, DomainError, InfeasibleEpsError, InfeasibleTargetError

DARE_TOL = 1e-9


@dataclass(frozen=True)
class LqgWeights:
    Q: np.ndarray
    R: np.ndarray

    @classmethod
    def from_scalars(cls, q_p: float = 1e4, q_v: float = 1e2, r: float = 0.01) -> "LqgWeights":
        return cls(np.diag([q_p] * 3 + [q_v] * 3), r * np.eye(3))

    def __post_init__(self):
        if np.min(np.linalg.eigvalsh(0.5 * (self.R + self.R.T))) <= 0:
            raise DomainError("R must be positive definite")
        if np.min(np.linalg.eigvalsh(0.5 * (self.Q + self.Q.T))) < -1e-12:
            raise DomainError("Q must be positive semidefinite")


@dataclass(frozen=True)
class LqgSynthesis:
    P: np.ndarray
    K: np.ndarray


@dataclass(frozen=True)
class RateCostInputs:
    eps_ctrl: float
    Sigma_est: np.ndarray
    Sigma_omega: np.ndarray
    Sigma_tilde_omega: np.ndarray
    D: np.ndarray
    S_mat: np.ndarray
    b_min: float
    entropy_power_N: float


def dare_residual(P, A, B, Q, R) -> float:
    btp = B.T @ P
    rhs = A.T @ P @ A - A.T @ P @ B @ np.linalg.solve(R + btp @ B, btp @ A) + Q
    denom = max(np.linalg.norm(P), 1e-300)
    return float(np.linalg.norm(P - rhs) / denom) if np.linalg.norm(P) > 0 else float(np.linalg.norm(rhs))


def _dare_value_iteration(A, B, Q, R, max_iter=100_000):
    p = np.array(Q, dtype=float)
    for it in range(1, max_iter + 1):
        btp = B.T @ p
        new = A.T @ p @ A - A.T @ p @ B @ np.linalg.solve(R + btp @ B, btp @ A) + Q
        new = 0.5 * (new + new.T)
        if np.linalg.norm(new - p) <= 1e-13 * max(1.0, np.linalg.norm(new)):
            return new
        p = new
    raise ConvergenceError("DARE value iteration did not converge", max_iter)


def solve_dare(A, B, Q, R) -> np.ndarray:
    """Stabilizing DARE solution, checked by its relative residual."""
    A, B, Q, R = (np.atleast_2d(np.asarray(m, dtype=float)) for m in (A, B, Q, R))
    if not np.any(Q):
        return np.zeros_like(A)
    try:
        p = solve_discrete_are(A, B, Q, R)
        p = 0.5 * (p + p.T)
        if dare_residual(p, A, B, Q, R) < DARE_TOL:
            return p
    except (np.linalg.LinAlgError, ValueError):
        pass
    p = _dare_value_iteration(A, B, Q, R)
    if dare_residual(p, A, B, Q, R) >= DARE_TOL:
        raise ConvergenceError("DARE residual above tolerance", 100_000)
    return p


def lqr_gain(A, B, R, P) -> np.ndarray:
    """K = (R + B^T P B)^-1 B^T P A."""
    return np.linalg.solve(R + B.T @ P @ B, B.T @ P @ A)


def synthesize(A, B, weights: LqgWeights) -> LqgSynthesis:
    p = solve_dare(A, B, weights.Q, weights.R)
    return LqgSynthesis(p, lqr_gain(A, B, weights.R, p))


def lqg_command(estimate, reference, gain) -> np.ndarray:
    return -np.asarray(gain) @ (np.asarray(estimate, dtype=float) - np.asarray(reference, dtype=float))


def empirical_lqg_cost(states, applied_controls, weights: LqgWeights, reference) -> float:
    """Time average of e^T Q e + u^T R u with e = x - x_ref."""
    e = np.atleast_2d(np.asarray(states, dtype=float) - np.asarray(reference, dtype=float))
    u = np.atleast_2d(np.asarray(applied_controls, dtype=float))
    if e.shape[0] < 1:
        raise DomainError("need at least one slot")
    stage = np.einsum("ni,ij,nj->n", e, weights.Q, e) + np.einsum("ni,ij,nj->n", u, weights.R, u)
    return float(np.mean(stage))


def coupled_riccati_DS(A, B, Q, R, eps_ctrl, tol: float = 1e-9, max_iter: int = 100_000):
    """Fixed point of D = (1-eps) S B (R + B^T S B)^-1 B^T S,  S = Q + A^T (S - D) A."""
    if not 0.0 <= eps_ctrl <= 1.0:
        raise DomainError("eps_ctrl must lie in [0, 1]")
    A, B, Q, R = (np.asarray(m, dtype=float) for m in (A, B, Q, R))
    s = Q.copy()
    qn = max(np.linalg.norm(Q), 1e-300)
    for it in range(1, max_iter + 1):
        sb = s @ B
        d = (1.0 - eps_ctrl) * sb @ np.linalg.solve(R + B.T @ sb, sb.T)
        d = 0.5 * (d + d.T)
        new = Q + A.T @ (s - d) @ A
        new = 0.5 * (new + new.T)
        if not np.all(np.isfinite(new)) or np.linalg.norm(new) > 1e12 * qn:
            raise InfeasibleEpsError(f"coupled Riccati recursion diverges at eps={eps_ctrl:.6g}")
        change = np.linalg.norm(new - s)
        s = new
        if change <= tol * max(np.linalg.norm(s), 1e-300):
            sb = s @ B
            d = (1.0 - eps_ctrl) * sb @ np.linalg.solve(R + B.T @ sb, sb.T)
            return 0.5 * (d + d.T), s
    raise InfeasibleEpsError(f"coupled Riccati recursion did not settle at eps={eps_ctrl:.6g} "
                             f"after {max_iter} iterations")


def ds_residual(A, B, Q, R, eps_ctrl, D, S) -> tuple[float, float]:
    sb = S @ B
    d_rhs = (1.0 - eps_ctrl) * sb @ np.linalg.solve(R + B.T @ sb, sb.T)
    s_rhs = Q + A.T @ (S - D) @ A
    return (float(np.linalg.norm(D - d_rhs) / max(np.linalg.norm(D), 1e-300)),
            float(np.linalg.norm(S - s_rhs) / np.linalg.norm(S)))


def pseudo_det(m, rel_tol: float = 1e-10) -> float:
    """|det| of a symmetric PSD matrix with a numerical-rank cutoff.

    Eigenvalues below ``rel_tol * max|eig|`` are treated as exact zeros,
    so a rank-deficient matrix reports det = 0 rather than roundoff.
    """
    vals = np.linalg.eigvalsh(0.5 * (m + m.T))
    top = float(np.max(np.abs(vals))) if vals.size else 0.0
    if top == 0.0 or np.any(np.abs(vals) <= rel_tol * top):
        return 0.0
    return float(np.prod(np.abs(vals)))


def gaussian_entropy_nats(cov) -> float:
    n = cov.shape[0]
    sign, logdet = np.linalg.slogdet(cov)
    if sign <= 0:
        return -math.inf
    return 0.5 * (n * math.log(2 * math.pi * math.e) + logdet)


def entropy_power(cov) -> float:
    """N = exp(2h/n) / (2 pi e) for a Gaussian vector; equals det(cov)^(1/n)."""
    n = cov.shape[0]
    h = gaussian_entropy_nats(cov)
    if h == -math.inf:
        return 0.0
    return math.exp(2.0 * h / n) / (2.0 * math.pi * math.e)


def b_min_floor(P, Sigma_omega) -> float:
    return float(np.trace(np.asarray(P) @ np.asarray(Sigma_omega)))


def rate_cost_L(b, A, D, Sigma_tilde_omega, b_min) -> float:
    """Minimum bits per slot needed to hold the LQG cost at ``b``."""
    if not b > b_min:
        raise InfeasibleTargetError(f"target cost {b} is not above the floor {b_min}")
    n = np.asarray(A).shape[0]
    det_a = abs(float(np.linalg.det(A)))
    n_pow = entropy_power(np.asarray(Sigma_tilde_omega, dtype=float))
    frac = n * n_pow * pseudo_det(np.asarray(D, dtype=float)) ** (1.0 / n) / (b - b_min)
    return math.log2(det_a) + 0.5 * n * math.log2(1.0 + frac)


def equivalent_noise_cov(Sigma_omega, B, K, Sigma_est, eps_ctrl) -> np.ndarray:
    """Covariance of w - delta B K e."""
    bk = np.asarray(B) @ np.asarray(K)
    out = np.asarray(Sigma_omega) + (1.0 - eps_ctrl) * bk @ np.asarray(Sigma_est) @ bk.T
    return 0.5 * (out + out.T)


def rate_cost_inputs(A, B, weights: LqgWeights, synthesis: LqgSynthesis, Sigma_omega,
                     Sigma_est, eps_ctrl) -> RateCostInputs:
    d, s = coupled_riccati_DS(A, B, weights.Q, weights.R, eps_ctrl)
    sto = equivalent_noise_cov(Sigma_omega, B, synthesis.K, Sigma_est, eps_ctrl)
    return RateCostInputs(eps_ctrl, np.asarray(Sigma_est), np.asarray(Sigma_omega), sto, d, s,
                          b_min_floor(synthesis.P, Sigma_omega), entropy_power(sto))
