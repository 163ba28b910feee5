"""ISAC observation synthesis and Kalman filtering of the 6-D drone state."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dynamics import ProcessNoise, SystemMatrices
from .errors import ConvergenceError, DomainError, EstimationError
from .sensing import SensingBounds


@dataclass(frozen=True)
class Observation:
    y: np.ndarray
    C: np.ndarray
    noise_cov: np.ndarray


@dataclass(frozen=True)
class KalmanState:
    estimate: np.ndarray
    covariance: np.ndarray


def observation_matrix(los_unit_vector) -> np.ndarray:
    """C = blkdiag(I3, g^T)."""
    c = np.zeros((4, 6))
    c[:3, :3] = np.eye(3)
    c[3, 3:] = np.asarray(los_unit_vector, dtype=float)
    return c


def observation_noise(bounds: SensingBounds) -> np.ndarray:
    r = np.zeros((4, 4))
    r[:3, :3] = bounds.crlb_position_m2
    r[3, 3] = bounds.crlb_radial_velocity_m2s2
    return r


def _sqrt_factor(cov: np.ndarray) -> np.ndarray:
    """Symmetric square root of a PSD matrix (tolerates exact zeros)."""
    cov = 0.5 * (cov + cov.T)
    vals, vecs = np.linalg.eigh(cov)
    scale = max(1.0, float(np.max(np.abs(vals)))) if vals.size else 1.0
    if np.any(vals < -1e-10 * scale):
        raise DomainError("noise covariance is not positive semidefinite")
    return vecs * np.sqrt(np.clip(vals, 0.0, None))


def synthesize_observation(true_state, los_unit_vector, bounds: SensingBounds,
                           rng: np.random.Generator) -> Observation:
    """y = C x + v with v ~ N(0, blkdiag(CRLB_p, CRLB_v))."""
    x = np.asarray(true_state, dtype=float)
    c = observation_matrix(los_unit_vector)
    r = observation_noise(bounds)
    return Observation(c @ x + _sqrt_factor(r) @ rng.standard_normal(4), c, r)


def draw_measurement(c: np.ndarray, r: np.ndarray, x, rng: np.random.Generator) -> Observation:
    """Generic linear-Gaussian measurement (used by the GNSS baseline)."""
    return Observation(c @ np.asarray(x, dtype=float) + _sqrt_factor(r) @ rng.standard_normal(c.shape[0]),
                       c, r)


def kalman_predict(prior: KalmanState, applied_control, matrices: SystemMatrices,
                   process_noise: ProcessNoise) -> KalmanState:
    a = matrices.A
    x = a @ prior.estimate + matrices.B @ np.asarray(applied_control, dtype=float)
    p = a @ prior.covariance @ a.T + process_noise.covariance
    return KalmanState(x, 0.5 * (p + p.T))


def kalman_update(predicted: KalmanState, obs: Observation) -> KalmanState:
    """Joseph-form measurement update."""
    c, r = obs.C, obs.noise_cov
    p = predicted.covariance
    s = c @ p @ c.T + r
    s = 0.5 * (s + s.T)
    try:
        cho = np.linalg.cholesky(s)
    except np.linalg.LinAlgError as exc:
        raise EstimationError("innovation covariance is singular") from exc
    if np.min(np.diag(cho)) <= 1e-12 * max(1.0, float(np.max(np.diag(cho)))):
        raise EstimationError("innovation covariance is singular")
    gain = np.linalg.solve(s, c @ p).T
    x = predicted.estimate + gain @ (obs.y - c @ predicted.estimate)
    ikc = np.eye(p.shape[0]) - gain @ c
    p_new = ikc @ p @ ikc.T + gain @ r @ gain.T
    return KalmanState(x, 0.5 * (p_new + p_new.T))


def kalman_step(prior: KalmanState, applied_control, observation: Observation | None,
                matrices: SystemMatrices, process_noise: ProcessNoise) -> KalmanState:
    """Predict with the applied control, then correct with ``observation`` if given."""
    pred = kalman_predict(prior, applied_control, matrices, process_noise)
    return pred if observation is None else kalman_update(pred, observation)


def initial_kalman_state(first_obs: Observation, velocity_var: float = 10.0) -> KalmanState:
    """Lift the first position fix with zero velocity."""
    x0 = np.zeros(6)
    x0[:3] = first_obs.y[:3]
    p0 = np.zeros((6, 6))
    p0[:3, :3] = first_obs.noise_cov[:3, :3]
    p0[3:, 3:] = velocity_var * np.eye(3)
    return KalmanState(x0, p0)


def _riccati_step(post, a, q, c, r):
    prior = a @ post @ a.T + q
    s = c @ prior @ c.T + r
    gain = np.linalg.solve(s, c @ prior).T
    ikc = np.eye(a.shape[0]) - gain @ c
    new = ikc @ prior @ ikc.T + gain @ r @ gain.T
    return 0.5 * (new + new.T)


def _filter_dare_doubling(a, c, q, r, tol=1e-14, max_iter=200):
    """Prior covariance of the filter DARE by structured doubling.

    Each step squares the contraction of the plain recursion, so very noisy
    observations (time constants of 1e7 slots) converge in a few dozen steps.
    """
    n = a.shape[0]
    ak = a.T.copy()
    gk = c.T @ np.linalg.solve(r, c)
    hk = np.array(q, dtype=float)
    for _ in range(max_iter):
        w = np.eye(n) + gk @ hk
        wa = np.linalg.solve(w, ak)
        h_new = hk + ak.T @ hk @ wa
        gk = gk + ak @ np.linalg.solve(w, gk) @ ak.T
        ak = ak @ wa
        gk = 0.5 * (gk + gk.T)
        h_new = 0.5 * (h_new + h_new.T)
        diff = np.linalg.norm(h_new - hk)
        hk = h_new
        if diff <= tol * max(np.linalg.norm(hk), 1e-300):
            return hk
    raise ConvergenceError("doubling iteration did not converge", max_iter)


def steady_estimation_covariance(matrices: SystemMatrices, process_noise: ProcessNoise,
                                 c: np.ndarray, r: np.ndarray, tol: float = 1e-12,
                                 max_iter: int = 200_000, accept: float = 1e-9) -> np.ndarray:
    """Fixed point of the filter Riccati recursion, returned as the posterior covariance.

    The prior comes from a doubling solve of the filter DARE and is accepted when one
    recursion step moves it by less than ``accept`` (relative). Otherwise the recursion
    itself is iterated to ``tol``.
    """
    a, q = matrices.A, process_noise.covariance
    post = np.eye(6) * 10.0
    try:
        prior = _filter_dare_doubling(a, c, q, r)
        s = c @ prior @ c.T + r
        post = prior - prior @ c.T @ np.linalg.solve(s, c @ prior)
        post = 0.5 * (post + post.T)
        step = _riccati_step(post, a, q, c, r)
        if np.linalg.norm(step - post) <= accept * max(1.0, np.linalg.norm(post)):
            return step
    except (np.linalg.LinAlgError, ConvergenceError):
        post = np.eye(6) * 10.0
    for it in range(1, max_iter + 1):
        new = _riccati_step(post, a, q, c, r)
        diff = np.linalg.norm(new - post)
        post = new
        if diff <= tol * max(1.0, np.linalg.norm(post)):
            return post
    raise ConvergenceError("filter Riccati recursion did not converge", max_iter)
