"""Propagation, array response, link SNR and finite-blocklength link metrics.

All gains are linear *power* quantities.  The only amplitude quantity in
the package is the complex small-scale coefficient ``g``; a path loss of
``L`` dB with shadowing ``eps`` dB corresponds to the power gain
``10 ** (-(L + eps) / 10)`` (amplitude ``10 ** (-(L + eps) / 20)``).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy.stats import norm

from .errors import ContractError, DomainError

SPEED_OF_LIGHT = 299_792_458.0
LOG2E = math.log2(math.e)


# ---------------------------------------------------------------------------
# Domain types
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class WaveformConfig:
    """OFDM numerology and power budget of the ISAC waveform (SI units)."""

    carrier_frequency_hz: float
    subcarrier_spacing_hz: float
    num_subcarriers: int
    num_symbols: int
    cp_duration_s: float
    total_power_w: float
    noise_psd_w_per_hz: float

    def __post_init__(self):
        for name in ("carrier_frequency_hz", "subcarrier_spacing_hz", "total_power_w",
                     "noise_psd_w_per_hz"):
            if not getattr(self, name) > 0:
                raise DomainError(f"{name} must be positive")
        if self.num_subcarriers < 1 or self.num_symbols < 1:
            raise DomainError("num_subcarriers and num_symbols must be >= 1")
        if self.cp_duration_s < 0:
            raise DomainError("cp_duration_s must be non-negative")

    @property
    def total_bandwidth_hz(self) -> float:
        return self.num_subcarriers * self.subcarrier_spacing_hz

    @property
    def per_subcarrier_power_w(self) -> float:
        return self.total_power_w / self.num_subcarriers

    @property
    def symbol_duration_s(self) -> float:
        return 1.0 / self.subcarrier_spacing_hz + self.cp_duration_s

    @property
    def wavelength_m(self) -> float:
        return SPEED_OF_LIGHT / self.carrier_frequency_hz

    @property
    def carrier_ghz(self) -> float:
        return self.carrier_frequency_hz / 1e9


@dataclass(frozen=True)
class ArrayConfig:
    n_x: int = 2
    n_y: int = 4
    element_spacing_wavelengths: float = 0.5
    wavelength_m: float = SPEED_OF_LIGHT / 2.4e9

    def __post_init__(self):
        if self.n_x < 1 or self.n_y < 1:
            raise DomainError("array dimensions must be >= 1")

    @property
    def size(self) -> int:
        return self.n_x * self.n_y


@dataclass(frozen=True)
class Geometry:
    """Drone position relative to the base-station array phase centre."""

    position_m: np.ndarray
    range_m: float
    azimuth_rad: float
    elevation_rad: float
    los_unit_vector: np.ndarray

    @classmethod
    def from_position(cls, position) -> "Geometry":
        p = np.asarray(position, dtype=float)
        rng = float(np.linalg.norm(p))
        if not rng > 0:
            raise DomainError("range must be positive")
        theta = math.atan2(p[1], p[0])
        # atan2 keeps full precision near the zenith where asin(z/l) does not
        phi = math.atan2(p[2], math.hypot(p[0], p[1]))
        return cls(p, rng, theta, phi, p / rng)

    @property
    def round_trip_delay_s(self) -> float:
        return 2.0 * self.range_m / SPEED_OF_LIGHT


class LinkKind(str, Enum):
    COMMUNICATION = "communication"
    SENSING = "sensing"


@dataclass(frozen=True)
class FadingDraw:
    small_scale_gain: complex
    shadow_db: float
    link_kind: LinkKind = LinkKind.COMMUNICATION

    @property
    def power(self) -> float:
        return abs(self.small_scale_gain) ** 2


@dataclass(frozen=True)
class LinkState:
    geometry: Geometry
    fading_draw: FadingDraw
    beam_gain: float
    path_gain_linear: float
    snr_linear: float = 0.0


@dataclass(frozen=True)
class FblParams:
    blocklength_symbols: float
    target_bler: float
    slot_duration_s: float
    payload_bits: float = 1.0

    def __post_init__(self):
        if self.blocklength_symbols < 1:
            raise DomainError("blocklength must be >= 1")
        if not 0 < self.target_bler < 1:
            raise DomainError("target BLER must lie in (0, 1)")
        if self.payload_bits < 1:
            raise DomainError("payload must be >= 1 bit")
        if not self.slot_duration_s > 0:
            raise DomainError("slot duration must be positive")


# ---------------------------------------------------------------------------
# Propagation
# ---------------------------------------------------------------------------


def path_loss_db(range_m, carrier_ghz):
    """UMa-AV LoS path loss in dB (range in metres, carrier in GHz)."""
    r = np.asarray(range_m, dtype=float)
    if np.any(r <= 0) or not carrier_ghz > 0:
        raise DomainError("range and carrier frequency must be positive")
    out = 28.0 + 22.0 * np.log10(r) + 20.0 * math.log10(carrier_ghz)
    return float(out) if out.ndim == 0 else out


def sensing_path_loss_db(range_m, carrier_ghz, rcs_m2, wavelength_m):
    """Round-trip radar loss in dB, including the target cross section."""
    if not rcs_m2 > 0 or not wavelength_m > 0:
        raise DomainError("RCS and wavelength must be positive")
    return (2.0 * path_loss_db(range_m, carrier_ghz) - 10.0 * math.log10(rcs_m2)
            + 10.0 * math.log10(wavelength_m ** 2 / (4.0 * math.pi)))


def db_to_power_gain(loss_db):
    return 10.0 ** (-np.asarray(loss_db, dtype=float) / 10.0)


def shadow_sigma_db(altitude_m, coeff_db: float = 4.64, decay_per_m: float = 0.0066):
    """Altitude-dependent shadow-fading standard deviation in dB.

    Heights below ground (only reached by diverging runs) use the ground value.
    """
    return coeff_db * np.exp(-decay_per_m * np.maximum(np.asarray(altitude_m, dtype=float), 0.0))


def rician_gain(rng: np.random.Generator, k_factor_db: float) -> complex:
    """Unit-mean-power Rician coefficient with a random LoS phase."""
    k = 10.0 ** (k_factor_db / 10.0)
    los = math.sqrt(k / (k + 1.0)) * np.exp(1j * rng.uniform(0.0, 2.0 * math.pi))
    scatter = math.sqrt(1.0 / (2.0 * (k + 1.0))) * (rng.standard_normal() + 1j * rng.standard_normal())
    return complex(los + scatter)


def draw_fading(rng: np.random.Generator, k_factor_db: float, sigma_sf_db: float,
                kind: LinkKind = LinkKind.COMMUNICATION) -> FadingDraw:
    g = rician_gain(rng, k_factor_db)
    return FadingDraw(g, float(rng.normal(0.0, sigma_sf_db)), kind)


# ---------------------------------------------------------------------------
# Array manifold
# ---------------------------------------------------------------------------


def los_unit_vector(theta, phi) -> np.ndarray:
    return np.array([math.cos(phi) * math.cos(theta),
                     math.cos(phi) * math.sin(theta),
                     math.sin(phi)])


def _axis_phases(theta, phi, array: ArrayConfig):
    k = 2.0 * math.pi * array.element_spacing_wavelengths
    nx = np.arange(array.n_x)
    ny = np.arange(array.n_y)
    st, ct, sp, cp = math.sin(theta), math.cos(theta), math.sin(phi), math.cos(phi)
    return (k * nx, k * ny, st, ct, sp, cp)


def array_response(theta, phi, array: ArrayConfig) -> np.ndarray:
    """UPA steering vector a = a_x kron a_y (first entry is 1)."""
    kx, ky, st, _, sp, cp = _axis_phases(theta, phi, array)
    ax = np.exp(1j * kx * st * cp)
    ay = np.exp(1j * ky * st * sp)
    return np.kron(ax, ay)


def array_response_derivatives(theta, phi, array: ArrayConfig):
    """Return ``(a, da/dtheta, da/dphi)``."""
    kx, ky, st, ct, sp, cp = _axis_phases(theta, phi, array)
    ax = np.exp(1j * kx * st * cp)
    ay = np.exp(1j * ky * st * sp)
    dax_dt = 1j * kx * ct * cp * ax
    dax_dp = -1j * kx * st * sp * ax
    day_dt = 1j * ky * ct * sp * ay
    day_dp = 1j * ky * st * cp * ay
    a = np.kron(ax, ay)
    da_dt = np.kron(dax_dt, ay) + np.kron(ax, day_dt)
    da_dp = np.kron(dax_dp, ay) + np.kron(ax, day_dp)
    return a, da_dt, da_dp


def steering_beamformer(theta, phi, array: ArrayConfig) -> np.ndarray:
    """Unit-norm conjugate beamformer ``a*(theta, phi) / sqrt(N)``.

    This is the transmit weight matched to the echo model, where the
    transmit pattern toward (theta, phi) is ``a^T w``.
    """
    return np.conj(array_response(theta, phi, array)) / math.sqrt(array.size)


def beam_gain(theta, phi, w, array: ArrayConfig) -> float:
    """|a^H(theta, phi) w|^2 for a unit-norm beamformer ``w``."""
    w = np.asarray(w, dtype=complex)
    if abs(np.linalg.norm(w) - 1.0) > 1e-9:
        raise ContractError("beamformer must have unit 2-norm")
    a = array_response(theta, phi, array)
    return float(abs(np.vdot(a, w)) ** 2)


# ---------------------------------------------------------------------------
# Link budget
# ---------------------------------------------------------------------------


def snr(link: LinkState, waveform: WaveformConfig) -> float:
    """Received SNR over the full band: |g|^2 P_t beta G / (N0 B)."""
    noise = waveform.noise_psd_w_per_hz * waveform.total_bandwidth_hz
    return (link.fading_draw.power * waveform.total_power_w * link.path_gain_linear
            * link.beam_gain / noise)


def snr_db_budget(link: LinkState, waveform: WaveformConfig, loss_db: float) -> float:
    """Same SNR assembled term by term in dB (used as a cross-check)."""
    return (10 * math.log10(link.fading_draw.power) + 10 * math.log10(waveform.total_power_w)
            - (loss_db + link.fading_draw.shadow_db) + 10 * math.log10(link.beam_gain)
            - 10 * math.log10(waveform.noise_psd_w_per_hz)
            - 10 * math.log10(waveform.total_bandwidth_hz))


def communication_link(geometry: Geometry, fading: FadingDraw, w, array: ArrayConfig,
                       waveform: WaveformConfig) -> LinkState:
    """Populate a downlink state for a transmit beam ``w``.

    The echo model writes the transmit pattern as ``a^T w`` while the
    downlink model writes ``a^H w``; both describe the same radiated beam,
    so the downlink sees the conjugate weights.
    """
    loss = path_loss_db(geometry.range_m, waveform.carrier_ghz)
    beta = float(db_to_power_gain(loss + fading.shadow_db))
    gain = beam_gain(geometry.azimuth_rad, geometry.elevation_rad, np.conj(w), array)
    state = LinkState(geometry, fading, gain, beta)
    return LinkState(geometry, fading, gain, beta, snr(state, waveform))


def dispersion(gamma):
    """Channel dispersion in bits^2 per channel use."""
    g = np.asarray(gamma, dtype=float)
    return LOG2E ** 2 * (1.0 - (1.0 + g) ** -2)


def fbl_rate(alpha, bandwidth_hz, gamma, blocklength, bler):
    """Normal-approximation achievable rate in bit/s, clamped at zero."""
    if np.any(np.asarray(gamma) < 0):
        raise DomainError("SNR must be non-negative")
    if blocklength < 1 or not 0 < bler < 1:
        raise DomainError("blocklength >= 1 and BLER in (0, 1) required")
    cap = np.log2(1.0 + np.asarray(gamma, dtype=float))
    penalty = np.sqrt(dispersion(gamma) / blocklength) * norm.isf(bler)
    out = np.asarray(alpha, dtype=float) * bandwidth_hz * np.maximum(cap - penalty, 0.0)
    return float(out) if out.ndim == 0 else out


def _drop_argument(alpha_ctrl, gamma, bandwidth_hz, fbl: FblParams):
    alpha = np.asarray(alpha_ctrl, dtype=float)
    gamma = np.asarray(gamma, dtype=float)
    need = fbl.payload_bits / (fbl.slot_duration_s * alpha * bandwidth_hz)
    deficit = np.log2(1.0 + gamma) - need
    v = dispersion(gamma)
    with np.errstate(divide="ignore", invalid="ignore"):
        scale = np.sqrt(fbl.blocklength_symbols / v)
        z = np.where(v > 0, scale * deficit, np.where(deficit >= 0, np.inf, -np.inf))
    return z, scale, need


def ctrl_drop_probability(alpha_ctrl, gamma, bandwidth_hz, fbl: FblParams):
    """Probability that an S-bit command misses its one-slot deadline."""
    z, _, _ = _drop_argument(alpha_ctrl, gamma, bandwidth_hz, fbl)
    out = norm.sf(z)
    return float(out) if np.ndim(out) == 0 else out


def ctrl_delivery_probability(alpha_ctrl, gamma, bandwidth_hz, fbl: FblParams):
    """1 - drop probability, evaluated without cancellation when drops are nearly certain."""
    z, _, _ = _drop_argument(alpha_ctrl, gamma, bandwidth_hz, fbl)
    out = norm.cdf(z)
    return float(out) if np.ndim(out) == 0 else out


def ctrl_drop_probability_grad(alpha_ctrl, gamma, bandwidth_hz, fbl: FblParams):
    """d(drop probability)/d(alpha_ctrl), closed form."""
    z, scale, need = _drop_argument(alpha_ctrl, gamma, bandwidth_hz, fbl)
    dz = np.where(np.isfinite(z), scale * need / np.asarray(alpha_ctrl, dtype=float), 0.0)
    out = -norm.pdf(z) * dz
    return float(out) if np.ndim(out) == 0 else out
