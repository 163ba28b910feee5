"""Fisher information of the OFDM echo and the derived position/velocity bounds.

The echo on sensing subcarrier ``k`` and symbol ``m`` is modelled as

    mu[m, k] = sqrt(P_k beta_S) g eta(theta, phi) exp(-j 2 pi k df tau) exp(j 2 pi m T_S nu)

with ``eta = a (a^T w)``.  Subcarrier and symbol indices are measured from
the centre of the allocated block, which makes the delay and Doppler
parameters orthogonal to the angles and to each other.  Under that
convention the brute-force Fisher information has the closed form used
by :func:`fim_elements`; :func:`fim_numeric_oracle` computes the same
quantity by numerically differentiating ``mu`` over the full grid.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .channel import (SPEED_OF_LIGHT, ArrayConfig, LinkState, WaveformConfig,
                      array_response_derivatives, los_unit_vector)
from .errors import (DomainError, InfeasibleSensingError, SingularGeometryError,
                     UnobservableGeometryError)

COND_THRESHOLD = 1e12


@dataclass(frozen=True)
class SpatialSignature:
    eta: np.ndarray
    d_eta_d_theta: np.ndarray
    d_eta_d_phi: np.ndarray


@dataclass(frozen=True)
class FimElements:
    tau_tau: float
    theta_theta: float
    phi_phi: float
    theta_phi: float
    nu_nu: float

    def position_matrix(self) -> np.ndarray:
        """3x3 FIM over (tau, theta, phi)."""
        return np.array([[self.tau_tau, 0.0, 0.0],
                         [0.0, self.theta_theta, self.theta_phi],
                         [0.0, self.theta_phi, self.phi_phi]])

    def full_matrix(self) -> np.ndarray:
        """4x4 FIM over (tau, theta, phi, nu)."""
        j = np.zeros((4, 4))
        j[:3, :3] = self.position_matrix()
        j[3, 3] = self.nu_nu
        return j


@dataclass(frozen=True)
class SensingBounds:
    crlb_position_m2: np.ndarray
    crlb_radial_velocity_m2s2: float

    @property
    def peb_m(self) -> float:
        return math.sqrt(max(float(np.trace(self.crlb_position_m2)), 0.0))

    @property
    def veb_ms(self) -> float:
        return math.sqrt(self.crlb_radial_velocity_m2s2)


def spatial_signature(theta, phi, w, array: ArrayConfig) -> SpatialSignature:
    """Two-way signature ``eta = a (a^T w)`` and its angular derivatives (w fixed)."""
    w = np.asarray(w, dtype=complex)
    a, da_t, da_p = array_response_derivatives(theta, phi, array)
    tx = a @ w
    return SpatialSignature(a * tx, da_t * tx + a * (da_t @ w), da_p * tx + a * (da_p @ w))


def index_second_moment(n):
    """Sum of squared centred indices over ``n`` equally spaced samples, n(n^2-1)/12."""
    n = np.asarray(n, dtype=float)
    return n * (n * n - 1.0) / 12.0


def sensing_noise_variance(waveform: WaveformConfig, mode: str = "subcarrier") -> float:
    """Per-sample noise variance: N0*df (one subcarrier) or N0*B (full band)."""
    if mode == "subcarrier":
        return waveform.noise_psd_w_per_hz * waveform.subcarrier_spacing_hz
    if mode == "full":
        return waveform.noise_psd_w_per_hz * waveform.total_bandwidth_hz
    raise DomainError(f"unknown sensing noise mode {mode!r}")


def _num_sensing_subcarriers(alpha_sen, waveform: WaveformConfig) -> float:
    n = alpha_sen * waveform.num_subcarriers
    if not n >= 1.0:
        raise InfeasibleSensingError(
            f"alpha_sen={alpha_sen} leaves fewer than one sensing subcarrier")
    return float(n)


def _snr_prefactor(link: LinkState, waveform: WaveformConfig, noise_var: float) -> float:
    return 2.0 * waveform.per_subcarrier_power_w * link.path_gain_linear * link.fading_draw.power / noise_var


def fim_elements(link: LinkState, waveform: WaveformConfig, alpha_sen: float,
                 signature: SpatialSignature, noise_var: float | None = None) -> FimElements:
    """Closed-form FIM entries for ``alpha_sen * K`` sensing subcarriers.

    ``link.path_gain_linear`` is the round-trip power gain beta_S and
    ``link.fading_draw`` the sensing small-scale coefficient.
    """
    n = _num_sensing_subcarriers(alpha_sen, waveform)
    if noise_var is None:
        noise_var = sensing_noise_variance(waveform)
    m = waveform.num_symbols
    c = _snr_prefactor(link, waveform, noise_var)
    eta2 = float(np.vdot(signature.eta, signature.eta).real)
    dt, dp = signature.d_eta_d_theta, signature.d_eta_d_phi
    grid = m * n
    return FimElements(
        tau_tau=c * eta2 * m * (2 * math.pi * waveform.subcarrier_spacing_hz) ** 2 * float(index_second_moment(n)),
        theta_theta=c * grid * float(np.vdot(dt, dt).real),
        phi_phi=c * grid * float(np.vdot(dp, dp).real),
        theta_phi=c * grid * float(np.vdot(dt, dp).real),
        nu_nu=c * eta2 * n * (2 * math.pi * waveform.symbol_duration_s) ** 2 * float(index_second_moment(m)),
    )


def echo_mean(params, link: LinkState, waveform: WaveformConfig, n_sub: int, w,
              array: ArrayConfig) -> np.ndarray:
    """Noiseless echo tensor of shape (symbols, subcarriers, elements)."""
    tau, theta, phi, nu = params
    a, _, _ = array_response_derivatives(theta, phi, array)
    eta = a * (a @ np.asarray(w, dtype=complex))
    k = np.arange(n_sub) - (n_sub - 1) / 2.0
    m = np.arange(waveform.num_symbols) - (waveform.num_symbols - 1) / 2.0
    amp = math.sqrt(waveform.per_subcarrier_power_w * link.path_gain_linear) * link.fading_draw.small_scale_gain
    phase = np.exp(1j * 2 * math.pi * waveform.symbol_duration_s * m * nu)[:, None] \
        * np.exp(-1j * 2 * math.pi * waveform.subcarrier_spacing_hz * k * tau)[None, :]
    return amp * phase[:, :, None] * eta[None, None, :]


def fim_numeric_oracle(link: LinkState, waveform: WaveformConfig, alpha_sen: float,
                       theta, phi, tau, nu, w, array: ArrayConfig,
                       noise_var: float | None = None) -> np.ndarray:
    """Brute-force 4x4 FIM over (tau, theta, phi, nu) by central differences of the echo mean."""
    n_sub = int(round(alpha_sen * waveform.num_subcarriers))
    if n_sub < 1:
        raise InfeasibleSensingError("no sensing subcarriers allocated")
    if noise_var is None:
        noise_var = sensing_noise_variance(waveform)
    x0 = np.array([tau, theta, phi, nu], dtype=float)
    steps = np.array([
        1e-4 / (2 * math.pi * waveform.subcarrier_spacing_hz * max(n_sub, 2)),
        1e-6,
        1e-6,
        1e-4 / (2 * math.pi * waveform.symbol_duration_s * max(waveform.num_symbols, 2)),
    ])
    grads = []
    for i in range(4):
        e = np.zeros(4)
        e[i] = steps[i]
        hi = echo_mean(x0 + e, link, waveform, n_sub, w, array)
        lo = echo_mean(x0 - e, link, waveform, n_sub, w, array)
        grads.append(((hi - lo) / (2 * steps[i])).ravel())
    g = np.array(grads)
    j = 2.0 / noise_var * np.real(g @ g.conj().T)
    return 0.5 * (j + j.T)


def position_jacobian(tau, theta, phi) -> np.ndarray:
    """d p / d(tau, theta, phi) for p = (c tau / 2) u(theta, phi)."""
    if abs(math.cos(phi)) < 1e-9:
        raise SingularGeometryError("elevation at +-90 deg: azimuth is undefined")
    st, ct, sp, cp = math.sin(theta), math.cos(theta), math.sin(phi), math.cos(phi)
    return 0.5 * SPEED_OF_LIGHT * np.array([
        [cp * ct, -tau * cp * st, -tau * sp * ct],
        [cp * st, tau * cp * ct, -tau * sp * st],
        [sp, 0.0, tau * cp],
    ])


def _stable_inverse(j: np.ndarray, cond_threshold: float) -> np.ndarray:
    d = np.diag(j).astype(float)
    if np.any(~np.isfinite(j)) or np.any(d <= 0):
        raise UnobservableGeometryError("FIM has a zero diagonal entry")
    s = 1.0 / np.sqrt(d)
    jn = j * s[:, None] * s[None, :]
    if np.linalg.cond(jn) > cond_threshold:
        raise UnobservableGeometryError("normalized FIM is numerically singular")
    inv = np.linalg.inv(jn) * s[:, None] * s[None, :]
    return 0.5 * (inv + inv.T)


def crlb_position(fim_position: np.ndarray, jacobian: np.ndarray,
                  cond_threshold: float = COND_THRESHOLD) -> np.ndarray:
    """Upsilon J^-1 Upsilon^T."""
    out = jacobian @ _stable_inverse(np.asarray(fim_position, dtype=float), cond_threshold) @ jacobian.T
    return 0.5 * (out + out.T)


def crlb_velocity(j_nunu: float, wavelength_m: float) -> float:
    if not j_nunu > 0:
        raise UnobservableGeometryError("zero Doppler information")
    return (0.5 * wavelength_m) ** 2 / j_nunu


def sensing_bounds(link: LinkState, waveform: WaveformConfig, alpha_sen: float,
                   signature: SpatialSignature, noise_var: float | None = None,
                   cond_threshold: float = COND_THRESHOLD) -> SensingBounds:
    """Position CRLB and radial-velocity CRLB for one slot."""
    geo = link.geometry
    fim = fim_elements(link, waveform, alpha_sen, signature, noise_var)
    jac = position_jacobian(geo.round_trip_delay_s, geo.azimuth_rad, geo.elevation_rad)
    return SensingBounds(crlb_position(fim.position_matrix(), jac, cond_threshold),
                         crlb_velocity(fim.nu_nu, waveform.wavelength_m))


@dataclass(frozen=True)
class CrlbCoefficients:
    """Trace coefficients so that, for n = alpha_sen*K sensing subcarriers,

    Tr CRLB_p = range_coeff / (n(n^2-1)/12) + angle_coeff / n
    CRLB_v    = velocity_coeff / n
    """

    range_coeff: float
    angle_coeff: float
    velocity_coeff: float

    def trace_position(self, n):
        return self.range_coeff / index_second_moment(n) + self.angle_coeff / np.asarray(n, dtype=float)

    def velocity(self, n):
        return self.velocity_coeff / np.asarray(n, dtype=float)


def crlb_coefficients(link: LinkState, waveform: WaveformConfig, signature: SpatialSignature,
                      noise_var: float | None = None,
                      cond_threshold: float = COND_THRESHOLD) -> CrlbCoefficients:
    """Separate the alpha_sen dependence of the bounds (used by the allocator)."""
    geo = link.geometry
    fim = fim_elements(link, waveform, 2.0 / waveform.num_subcarriers, signature, noise_var)
    jac = position_jacobian(geo.round_trip_delay_s, geo.azimuth_rad, geo.elevation_rad)
    m2 = float(index_second_moment(2.0))
    if not fim.tau_tau > 0:
        raise UnobservableGeometryError("no delay information")
    range_coeff = float(jac[:, 0] @ jac[:, 0]) / fim.tau_tau * m2
    ang = _stable_inverse(np.array([[fim.theta_theta, fim.theta_phi],
                                    [fim.theta_phi, fim.phi_phi]]), cond_threshold)
    angle_coeff = float(np.trace(jac[:, 1:] @ ang @ jac[:, 1:].T)) * 2.0
    velocity_coeff = crlb_velocity(fim.nu_nu, waveform.wavelength_m) * 2.0
    return CrlbCoefficients(range_coeff, angle_coeff, velocity_coeff)


__all__ = [
    "SpatialSignature", "FimElements", "SensingBounds", "CrlbCoefficients",
    "spatial_signature", "index_second_moment", "sensing_noise_variance", "fim_elements",
    "echo_mean", "fim_numeric_oracle", "position_jacobian", "crlb_position", "crlb_velocity",
    "sensing_bounds", "crlb_coefficients", "los_unit_vector",
]
