import math
from types import SimpleNamespace

import numpy as np
import pytest
from scipy.linalg import solve_discrete_are

from isccsim.dynamics import ProcessNoise, SystemMatrices, build_matrices
from isccsim.errors import DomainError, EstimationError
from isccsim.estimation import (KalmanState, Observation, initial_kalman_state, kalman_predict,
                                kalman_step, kalman_update, observation_matrix,
                                steady_estimation_covariance, synthesize_observation)
from isccsim.sensing import SensingBounds

LOS = np.array([0.6, 0.0, 0.8])


def bounds(scale=1.0):
    p = scale * np.array([[2.0, 0.3, 0.1], [0.3, 1.0, 0.0], [0.1, 0.0, 0.5]])
    return SensingBounds(p, 0.04 * scale)


def test_observation_matrix():
    c = observation_matrix(LOS)
    np.testing.assert_array_equal(c[3], [0, 0, 0, 0.6, 0.0, 0.8])
    assert np.linalg.matrix_rank(c) == 4


def test_zero_noise_observation(rng):
    x = np.array([1.0, 2.0, 3.0, 4.0, 5.0, 6.0])
    obs = synthesize_observation(x, LOS, SensingBounds(np.zeros((3, 3)), 0.0), rng)
    np.testing.assert_array_equal(obs.y, observation_matrix(LOS) @ x)


def test_observation_noise_covariance(rng):
    x = np.zeros(6)
    b = bounds()
    ys = np.array([synthesize_observation(x, LOS, b, rng).y for _ in range(100_000)])
    r = np.zeros((4, 4))
    r[:3, :3] = b.crlb_position_m2
    r[3, 3] = b.crlb_radial_velocity_m2s2
    assert np.linalg.norm(np.cov(ys.T) - r) <= 0.05 * np.linalg.norm(r)


def test_non_psd_bounds_rejected(rng):
    with pytest.raises(DomainError):
        synthesize_observation(np.zeros(6), LOS, SensingBounds(-np.eye(3), 1.0), rng)


def test_predict_only():
    m = build_matrices(0.1)
    pn = ProcessNoise()
    prior = KalmanState(np.arange(6.0), np.eye(6))
    u = np.array([1.0, 0.0, -1.0])
    out = kalman_step(prior, u, None, m, pn)
    np.testing.assert_allclose(out.estimate, m.A @ prior.estimate + m.B @ u)
    np.testing.assert_allclose(out.covariance, m.A @ m.A.T + pn.covariance)


def test_exact_position_measurement():
    m = build_matrices(0.1)
    c = observation_matrix(LOS)
    r = np.diag([1e-14] * 3 + [1e-2])
    prior = KalmanState(np.zeros(6), 100 * np.eye(6))
    y = np.array([3.0, -1.0, 2.0, 0.5])
    post = kalman_step(prior, np.zeros(3), Observation(y, c, r), m, ProcessNoise())
    np.testing.assert_allclose(post.estimate[:3], y[:3], atol=1e-9)


def test_update_shrinks_observed_covariance_and_stays_symmetric(rng):
    c = observation_matrix(LOS)
    a = rng.standard_normal((6, 6))
    prior = KalmanState(np.zeros(6), a @ a.T + np.eye(6))
    r = np.diag([1.0, 2.0, 0.5, 0.1])
    post = kalman_update(prior, Observation(np.ones(4), c, r))
    diff = prior.covariance - post.covariance
    assert np.min(np.linalg.eigvalsh(0.5 * (diff + diff.T))) >= -1e-10
    assert np.linalg.norm(post.covariance - post.covariance.T) < 1e-12


def test_singular_innovation():
    c = observation_matrix(LOS)
    with pytest.raises(EstimationError):
        kalman_update(KalmanState(np.zeros(6), np.zeros((6, 6))), Observation(np.zeros(4), c, np.zeros((4, 4))))


def test_scalar_riccati_fixed_point():
    q, r = 0.3, 2.0
    mats = SystemMatrices(np.array([[1.0]]), np.array([[0.0]]), 1.0)
    pn = SimpleNamespace(covariance=np.array([[q]]))
    state = KalmanState(np.zeros(1), np.array([[5.0]]))
    obs = Observation(np.zeros(1), np.array([[1.0]]), np.array([[r]]))
    for _ in range(200):
        prior = kalman_predict(state, np.zeros(1), mats, pn)
        state = kalman_update(prior, obs)
    assert prior.covariance[0, 0] == pytest.approx((q + math.sqrt(q * q + 4 * q * r)) / 2, rel=1e-12)


def test_initial_state():
    r = np.diag([4.0, 5.0, 6.0, 0.1])
    kf = initial_kalman_state(Observation(np.array([1.0, 2.0, 3.0, 9.0]), observation_matrix(LOS), r), 10.0)
    np.testing.assert_array_equal(kf.estimate, [1, 2, 3, 0, 0, 0])
    np.testing.assert_array_equal(np.diag(kf.covariance), [4, 5, 6, 10, 10, 10])


def _steady(scale):
    c = observation_matrix(LOS)
    r = np.diag([scale] * 3 + [0.01])
    return steady_estimation_covariance(build_matrices(0.1), ProcessNoise(), c, r), c, r


def test_steady_covariance_fixed_point():
    post, c, r = _steady(1.0)
    m, q = build_matrices(0.1), ProcessNoise().covariance
    prior = m.A @ post @ m.A.T + q
    nxt = KalmanState(np.zeros(6), prior)
    again = kalman_update(nxt, Observation(np.zeros(4), c, r)).covariance
    assert np.linalg.norm(again - post) <= 1e-9 * np.linalg.norm(post)


def test_steady_covariance_matches_scipy_dare():
    post, c, r = _steady(1.0)
    m, q = build_matrices(0.1), ProcessNoise().covariance
    prior = solve_discrete_are(m.A.T, c.T, q, r)
    expect = prior - prior @ c.T @ np.linalg.solve(c @ prior @ c.T + r, c @ prior)
    np.testing.assert_allclose(post, expect, rtol=1e-8, atol=1e-12)


def test_steady_covariance_very_noisy_observation():
    # position noise 1e13 m^2 against 0.2 m^2 process noise: the plain recursion needs ~1e7 steps
    u = np.array([0.3, 0.5, 0.81]) / np.linalg.norm([0.3, 0.5, 0.81])
    c = observation_matrix(u)
    r = np.diag([2e13] * 3 + [2.8e4])
    m, pn = build_matrices(0.1), ProcessNoise()
    post = steady_estimation_covariance(m, pn, c, r)
    prior = m.A @ post @ m.A.T + pn.covariance
    again = kalman_update(KalmanState(np.zeros(6), prior), Observation(np.zeros(4), c, r)).covariance
    assert np.linalg.norm(again - post) <= 1e-9 * np.linalg.norm(post)
    assert np.min(np.linalg.eigvalsh(post)) > 0


def test_steady_covariance_limits_and_monotone():
    tiny, _, _ = _steady(1e-10)
    assert np.max(np.abs(tiny[:3, :3])) < 1e-8
    lo, _, _ = _steady(0.5)
    hi, _, _ = _steady(5.0)
    assert np.min(np.linalg.eigvalsh(hi - lo)) >= -1e-10


def test_nees_consistency(rng):
    """Consistent linear-Gaussian model: time-averaged NEES within the chi-square band."""
    m = build_matrices(0.1)
    pn = ProcessNoise()
    c = observation_matrix(LOS)
    r = np.diag([1.0, 1.0, 1.0, 0.01])
    vals = []
    for _ in range(20):
        x = np.array([100.0, 0.0, 150.0, 1.0, 0.0, 0.0])
        kf = KalmanState(x + rng.multivariate_normal(np.zeros(6), np.eye(6)), np.eye(6))
        for _ in range(200):
            x = m.A @ x + pn.draw(rng)
            y = c @ x + rng.multivariate_normal(np.zeros(4), r)
            kf = kalman_step(kf, np.zeros(3), Observation(y, c, r), m, pn)
            e = x - kf.estimate
            vals.append(e @ np.linalg.solve(kf.covariance, e))
    assert 4.8 <= np.mean(vals) <= 7.2
