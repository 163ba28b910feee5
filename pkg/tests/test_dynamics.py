import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from isccsim.dynamics import DroneState, ProcessNoise, build_matrices, radial_velocity, step
from isccsim.errors import DomainError

vec = lambda n: arrays(np.float64, n, elements=st.floats(-1e3, 1e3))  # noqa: E731


def test_matrices_table_values():
    m = build_matrices(0.1)
    assert m.A[0, 3] == pytest.approx(0.1)
    assert m.B[0, 0] == pytest.approx(0.005)
    assert m.B[3, 0] == pytest.approx(0.1)
    assert np.linalg.det(m.A) == 1.0
    np.testing.assert_allclose(np.linalg.eigvals(m.A), np.ones(6))
    with pytest.raises(DomainError):
        build_matrices(0.0)


def test_constant_velocity_and_newton():
    m = build_matrices(1.0)
    np.testing.assert_allclose(step(np.array([0, 0, 0, 1.0, 0, 0]), np.zeros(3), np.zeros(6), m),
                               [1, 0, 0, 1, 0, 0])
    dt, px, py, pz, v, a = 0.1, 10.0, -3.0, 150.0, 2.0, 0.7
    m = build_matrices(dt)
    out = step(DroneState(np.array([px, py, pz]), np.array([v, 0, 0])), np.array([a, 0, 0]), np.zeros(6), m)
    np.testing.assert_allclose(out.as_vector(),
                               [px + v * dt + 0.5 * a * dt * dt, py, pz, v + a * dt, 0, 0], rtol=1e-15)


def test_zero_input_rest():
    m = build_matrices(0.1)
    x = np.array([1.0, 2.0, 3.0, 0, 0, 0])
    np.testing.assert_array_equal(step(x, np.zeros(3), np.zeros(6), m), x)


@given(vec(6), vec(6), vec(3), vec(3))
def test_step_linear(x1, x2, u1, u2):
    m = build_matrices(0.1)
    z = np.zeros(6)
    lhs = step(x1 + x2, u1 + u2, z, m)
    rhs = step(x1, u1, z, m) + step(x2, u2, z, m)
    np.testing.assert_allclose(lhs, rhs, atol=1e-9)


def test_noise_mean_monte_carlo(rng):
    m = build_matrices(0.1)
    pn = ProcessNoise()
    x = np.array([5.0, -2.0, 120.0, 1.0, 0.5, -0.2])
    draws = np.array([step(x, np.zeros(3), pn.draw(rng), m) for _ in range(100_000)])
    sd = np.sqrt(np.diag(pn.covariance))
    assert np.all(np.abs(draws.mean(axis=0) - m.A @ x) < 3 * sd / np.sqrt(len(draws)) + 1e-12)
    np.testing.assert_allclose(draws.var(axis=0), sd ** 2, rtol=0.02)


def test_process_noise_validation():
    with pytest.raises(DomainError):
        ProcessNoise(-1.0, 0.0)
    np.testing.assert_array_equal(ProcessNoise(0.2, 0.002).covariance,
                                  np.diag([0.2] * 3 + [0.002] * 3))


def test_radial_velocity():
    s = DroneState(np.zeros(3), np.array([3.0, 4.0, 0.0]))
    assert radial_velocity(s, [1, 0, 0]) == 3.0
    assert radial_velocity(s, [0.6, 0.8, 0]) == pytest.approx(5.0)
    assert radial_velocity(s, [0, 0, 1]) == 0.0
    with pytest.raises(DomainError):
        radial_velocity(s, [0, 0, 0])


@given(vec(3), vec(3).filter(lambda u: np.linalg.norm(u) > 1e-3))
def test_radial_velocity_bound(v, u):
    u = u / np.linalg.norm(u)
    assert abs(radial_velocity(DroneState(np.zeros(3), v), u)) <= math.hypot(*v) * (1 + 1e-12)
