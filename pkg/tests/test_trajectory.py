import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from isccsim.errors import DomainError
from isccsim.trajectory import (Coverage, cubic_spline, intensity_for_mean_count, poisson_waypoints,
                                random_trajectory, shift_origin)

COV = Coverage()


def test_coverage_volume_monte_carlo(rng):
    r = COV.radius_m
    pts = np.column_stack([rng.uniform(-r, r, 400_000), rng.uniform(-r, r, 400_000),
                           rng.uniform(0, r, 400_000)])
    frac = np.mean(COV.contains(pts))
    assert frac * (2 * r) ** 2 * r == pytest.approx(COV.volume_m3, rel=0.02)


@given(st.integers(0, 2 ** 32 - 1))
@settings(max_examples=20, deadline=None)
def test_waypoints_in_coverage(seed):
    pts = poisson_waypoints(np.random.default_rng(seed), intensity_for_mean_count(8, COV), COV)
    assert pts.shape[0] >= 4
    assert np.all(COV.contains(pts))


def test_poisson_mean_count(rng):
    lam = intensity_for_mean_count(8, COV)
    counts = np.array([poisson_waypoints(rng, lam, COV, min_count=0).shape[0] for _ in range(10_000)])
    assert abs(counts.mean() - 8) < 3 * np.sqrt(8 / len(counts))


def test_low_intensity_raises(rng):
    with pytest.raises(DomainError):
        poisson_waypoints(rng, 1e-20, COV, max_redraws=10)


def test_seeded_reproducibility():
    a = random_trajectory(np.random.default_rng(9))
    b = random_trajectory(np.random.default_rng(9))
    np.testing.assert_array_equal(a.states, b.states)
    assert len(a) == 5000
    assert np.all(COV.contains(a.positions))


def test_straight_line_constant_velocity():
    wp = np.array([[0.0, 0, 150], [10, 20, 160], [20, 40, 170], [30, 60, 180]])
    traj = cubic_spline(wp, 30.0, 0.1)
    v = traj.velocities
    np.testing.assert_allclose(v, np.tile([1.0, 2.0, 1.0], (len(traj), 1)), atol=1e-9)


def test_knot_interpolation_and_derivatives(trajectory):
    s = trajectory.spline
    knots = np.linspace(0, 500.0, trajectory.waypoints.shape[0])
    assert np.max(np.abs(s(knots) - trajectory.waypoints)) < 1e-9
    fd = np.gradient(trajectory.positions, trajectory.dt, axis=0)
    assert np.max(np.abs(fd[1:-1] - trajectory.velocities[1:-1])) < 0.05
    acc = np.abs(np.diff(trajectory.positions, 2, axis=0))
    bound = np.max(np.abs(s(np.linspace(0, 500, 20001), 2)), axis=0) * trajectory.dt ** 2
    assert np.all(acc <= bound * (1 + 1e-6) + 1e-9)
    # natural end conditions
    np.testing.assert_allclose(s(np.array([0.0, 500.0]), 2), 0.0, atol=1e-9)


def test_spline_validation():
    wp = np.array([[0.0, 0, 150], [10, 0, 150], [10, 0, 150], [20, 0, 150]])
    with pytest.raises(DomainError):
        cubic_spline(wp, 10.0, 0.1)
    with pytest.raises(DomainError):
        cubic_spline(wp[:3], 10.0, 0.1)
    good = np.array([[0.0, 0, 150], [10, 0, 150], [20, 5, 150], [30, 0, 150]])
    with pytest.raises(DomainError):
        cubic_spline(good, 10.05, 0.1)
    assert len(cubic_spline(good, 10.0, 0.1)) == 100


def test_shift_origin(trajectory):
    rel = shift_origin(trajectory, [0, 0, 25.0])
    np.testing.assert_allclose(rel[:, 2], trajectory.positions[:, 2] - 25.0)
