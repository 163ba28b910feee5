"""Double-integrator drone kinematics."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DomainError

STATE_DIM = 6
INPUT_DIM = 3


@dataclass(frozen=True)
class DroneState:
    position_m: np.ndarray
    velocity_ms: np.ndarray

    @classmethod
    def from_vector(cls, x) -> "DroneState":
        x = np.asarray(x, dtype=float)
        return cls(x[:3].copy(), x[3:].copy())

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.position_m, self.velocity_ms])


@dataclass(frozen=True)
class SystemMatrices:
    A: np.ndarray
    B: np.ndarray
    dt_s: float


@dataclass(frozen=True)
class ProcessNoise:
    sigma_p2_m2: float = 0.2
    sigma_v2_m2s2: float = 0.002

    def __post_init__(self):
        if self.sigma_p2_m2 < 0 or self.sigma_v2_m2s2 < 0:
            raise DomainError("process noise variances must be non-negative")

    @property
    def covariance(self) -> np.ndarray:
        return np.diag([self.sigma_p2_m2] * 3 + [self.sigma_v2_m2s2] * 3)

    def draw(self, rng: np.random.Generator) -> np.ndarray:
        std = np.sqrt(np.diag(self.covariance))
        return std * rng.standard_normal(STATE_DIM)


def build_matrices(dt: float) -> SystemMatrices:
    if not dt > 0:
        raise DomainError("dt must be positive")
    eye = np.eye(3)
    a = np.block([[eye, dt * eye], [np.zeros((3, 3)), eye]])
    b = np.vstack([0.5 * dt * dt * eye, dt * eye])
    return SystemMatrices(a, b, float(dt))


def step(state, applied_control, noise_draw, matrices: SystemMatrices):
    """x+ = A x + B u + w.  Accepts a DroneState or a raw 6-vector and returns the same kind."""
    x = state.as_vector() if isinstance(state, DroneState) else np.asarray(state, dtype=float)
    nxt = matrices.A @ x + matrices.B @ np.asarray(applied_control, dtype=float) \
        + np.asarray(noise_draw, dtype=float)
    return DroneState.from_vector(nxt) if isinstance(state, DroneState) else nxt


def radial_velocity(state, los_unit_vector) -> float:
    """Projection of the velocity onto the line of sight."""
    u = np.asarray(los_unit_vector, dtype=float)
    if not np.linalg.norm(u) > 0:
        raise DomainError("line-of-sight direction undefined at zero range")
    v = state.velocity_ms if isinstance(state, DroneState) else np.asarray(state, dtype=float)[3:]
    return float(u @ v)
