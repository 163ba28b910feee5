"""Random reference trajectories: Poisson waypoints joined by a natural cubic spline."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.interpolate import CubicSpline

from .errors import DomainError


@dataclass(frozen=True)
class Coverage:
    radius_m: float = 1000.0
    min_altitude_m: float = 100.0
    max_altitude_m: float = 300.0

    @property
    def volume_m3(self) -> float:
        """Volume of {|p| <= R, h_min < z <= h_max} (a spherical segment)."""
        r = self.radius_m

        def cap_below(z):  # volume of the ball with height coordinate in [0, z]
            return math.pi * (r * r * z - z ** 3 / 3.0)

        return cap_below(self.max_altitude_m) - cap_below(self.min_altitude_m)

    def contains(self, p) -> np.ndarray:
        p = np.atleast_2d(p)
        return ((np.linalg.norm(p, axis=1) <= self.radius_m + 1e-9)
                & (p[:, 2] > self.min_altitude_m) & (p[:, 2] <= self.max_altitude_m + 1e-9))


@dataclass(frozen=True)
class ReferenceTrajectory:
    waypoints: np.ndarray
    times_s: np.ndarray
    states: np.ndarray  # (N, 6): [p_ref, v_ref]
    dt: float
    spline: CubicSpline | None = None

    @property
    def positions(self) -> np.ndarray:
        return self.states[:, :3]

    @property
    def velocities(self) -> np.ndarray:
        return self.states[:, 3:]

    def __len__(self) -> int:
        return self.states.shape[0]


def intensity_for_mean_count(mean_count: float, coverage: Coverage) -> float:
    return mean_count / coverage.volume_m3


def _uniform_in_region(rng: np.random.Generator, count: int, coverage: Coverage) -> np.ndarray:
    """Rejection-sample ``count`` points uniformly in the coverage region."""
    out = np.empty((0, 3))
    r = coverage.radius_m
    while out.shape[0] < count:
        need = count - out.shape[0]
        cand = np.column_stack([rng.uniform(-r, r, 2 * need + 4), rng.uniform(-r, r, 2 * need + 4),
                                rng.uniform(coverage.min_altitude_m, coverage.max_altitude_m, 2 * need + 4)])
        cand = cand[coverage.contains(cand) & (cand[:, 2] > coverage.min_altitude_m)]
        out = np.vstack([out, cand[:need]])
    return out


def poisson_waypoints(rng: np.random.Generator, intensity: float, coverage: Coverage,
                      min_count: int = 4, max_redraws: int = 10_000) -> np.ndarray:
    """Homogeneous Poisson points in the coverage region; redrawn until at least ``min_count``."""
    if not coverage.volume_m3 > 0:
        raise DomainError("coverage volume must be positive")
    mean = intensity * coverage.volume_m3
    for _ in range(max_redraws):
        count = int(rng.poisson(mean))
        if count >= min_count:
            return _uniform_in_region(rng, count, coverage)
    raise DomainError("intensity too low to produce the minimum waypoint count")


def cubic_spline(waypoints, total_time: float, dt: float) -> ReferenceTrajectory:
    """Natural cubic spline through waypoints at uniformly spaced knot times."""
    wp = np.asarray(waypoints, dtype=float)
    if wp.ndim != 2 or wp.shape[1] != 3 or wp.shape[0] < 4:
        raise DomainError("need at least four 3-D waypoints")
    if np.any(np.linalg.norm(np.diff(wp, axis=0), axis=1) == 0):
        raise DomainError("duplicate consecutive waypoints")
    n_float = total_time / dt
    n = int(round(n_float))
    if n < 1 or abs(n - n_float) > 1e-9 * max(1.0, n_float):
        raise DomainError("total_time must be an integer multiple of dt")
    knots = np.linspace(0.0, total_time, wp.shape[0])
    spline = CubicSpline(knots, wp, bc_type="natural")
    t = np.arange(n) * dt
    states = np.hstack([spline(t), spline(t, 1)])
    return ReferenceTrajectory(wp, t, states, float(dt), spline)


def random_trajectory(rng: np.random.Generator, coverage: Coverage = Coverage(),
                      mean_waypoints: float = 8.0, total_time: float = 500.0, dt: float = 0.1,
                      max_redraws: int = 1000) -> ReferenceTrajectory:
    """Draw waypoints and redraw until every sampled reference point lies in coverage."""
    lam = intensity_for_mean_count(mean_waypoints, coverage)
    for _ in range(max_redraws):
        traj = cubic_spline(poisson_waypoints(rng, lam, coverage), total_time, dt)
        if np.all(coverage.contains(traj.positions)):
            return traj
    raise DomainError("could not draw an in-coverage trajectory")


def shift_origin(traj: ReferenceTrajectory, origin) -> np.ndarray:
    """Reference positions relative to a ground station at ``origin``."""
    return traj.positions - np.asarray(origin, dtype=float)
