"""Flat key/value configuration with units in the key names, plus run manifests."""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .channel import SPEED_OF_LIGHT, ArrayConfig, FblParams, WaveformConfig
from .control import LqgWeights
from .dynamics import ProcessNoise
from .errors import ConfigError
from .trajectory import Coverage


@dataclass(frozen=True)
class Config:
    # radio
    carrier_frequency_ghz: float = 2.4
    bandwidth_mhz: float = 10.0
    tx_power_dbm: float = 42.0
    noise_psd_dbm_hz: float = -150.0
    num_subcarriers: int = 100
    subcarrier_spacing_khz: float = 100.0
    num_symbols: int = 64
    symbol_duration_us: float = 12.5
    # geometry and propagation
    gbs_height_m: float = 25.0
    array_nx: int = 2
    array_ny: int = 4
    element_spacing_wavelengths: float = 0.5
    coverage_radius_m: float = 1000.0
    altitude_min_m: float = 100.0
    altitude_max_m: float = 300.0
    shadow_coeff_db: float = 4.64
    shadow_decay_per_m: float = 0.0066
    rician_k_db: float = 10.0
    rcs_m2: float = 0.01
    sensing_noise_mode: str = "subcarrier"
    sensing_snr_offset_db: float = 0.0
    # mission
    mission_duration_s: float = 500.0
    slot_s: float = 0.1
    spline_mean_waypoints: float = 8.0
    # control
    lqg_qp: float = 1e4
    lqg_qv: float = 1e2
    lqg_r: float = 0.01
    lqg_target_over_floor: float = 1.5
    process_noise_pos_m2: float = 0.2
    process_noise_vel_m2s2: float = 0.002
    kf_init_velocity_var_m2s2: float = 10.0
    actuator_limit_ms2: float = 0.0
    divergence_threshold_m: float = 1e4
    # links
    ctrl_payload_bits: int = 256
    ctrl_blocklength: int = 50
    ctrl_bler: float = 1e-5
    comm_blocklength: int = 8000
    comm_bler: float = 1e-3
    comm_min_rate_mbps: float = 70.0
    # allocation
    min_fraction: float = 1e-6
    stability_margin: float = 0.1
    allocation_samples: int = 250
    sca_rho: float = 10.0
    sca_tol: float = 1e-8
    sca_max_iter: int = 200
    ga_population: int = 50
    ga_generations: int = 100
    ga_tournament: int = 3
    ga_mutation_sigma: float = 0.02
    # baselines
    gnss_pos_std_m: float = 3.0
    gnss_vel_std_ms: float = 0.2

    def __post_init__(self):
        positive = ["carrier_frequency_ghz", "bandwidth_mhz", "num_subcarriers", "subcarrier_spacing_khz",
                    "num_symbols", "symbol_duration_us", "array_nx", "array_ny",
                    "element_spacing_wavelengths", "coverage_radius_m", "rcs_m2", "mission_duration_s",
                    "slot_s", "spline_mean_waypoints", "lqg_r", "ctrl_payload_bits", "ctrl_blocklength",
                    "comm_blocklength", "min_fraction", "allocation_samples", "sca_rho", "sca_tol",
                    "sca_max_iter", "ga_population", "ga_generations", "ga_tournament",
                    "divergence_threshold_m", "lqg_target_over_floor"]
        for key in positive:
            if not getattr(self, key) > 0:
                raise ConfigError("must be positive", key)
        nonneg = ["gbs_height_m", "lqg_qp", "lqg_qv", "process_noise_pos_m2", "process_noise_vel_m2s2",
                  "kf_init_velocity_var_m2s2", "actuator_limit_ms2", "comm_min_rate_mbps",
                  "stability_margin", "ga_mutation_sigma", "gnss_pos_std_m", "gnss_vel_std_ms",
                  "shadow_coeff_db", "shadow_decay_per_m"]
        for key in nonneg:
            if getattr(self, key) < 0:
                raise ConfigError("must be non-negative", key)
        for key in ("ctrl_bler", "comm_bler"):
            if not 0 < getattr(self, key) < 1:
                raise ConfigError("must lie in (0, 1)", key)
        if not 0 <= self.altitude_min_m < self.altitude_max_m:
            raise ConfigError("need 0 <= altitude_min_m < altitude_max_m", "altitude_min_m")
        if self.altitude_min_m >= self.coverage_radius_m:
            raise ConfigError("altitude range lies outside the coverage sphere", "altitude_min_m")
        if abs(self.num_subcarriers * self.subcarrier_spacing_khz * 1e-3 - self.bandwidth_mhz) > 1e-9 * self.bandwidth_mhz:
            raise ConfigError("must equal num_subcarriers * subcarrier_spacing_khz", "bandwidth_mhz")
        if self.symbol_duration_us * 1e-6 < 1.0 / (self.subcarrier_spacing_khz * 1e3) - 1e-15:
            raise ConfigError("shorter than the useful symbol 1/spacing", "symbol_duration_us")
        n = self.mission_duration_s / self.slot_s
        if abs(n - round(n)) > 1e-9 * n:
            raise ConfigError("mission_duration_s must be a multiple of slot_s", "slot_s")
        if self.sensing_noise_mode not in ("subcarrier", "full"):
            raise ConfigError("must be 'subcarrier' or 'full'", "sensing_noise_mode")
        if self.ga_population < 2:
            raise ConfigError("must be >= 2", "ga_population")

    # ---- derived SI objects -------------------------------------------------

    @property
    def tx_power_w(self) -> float:
        return 10.0 ** ((self.tx_power_dbm - 30.0) / 10.0)

    @property
    def noise_psd_w_per_hz(self) -> float:
        return 10.0 ** ((self.noise_psd_dbm_hz - 30.0) / 10.0)

    @property
    def num_slots(self) -> int:
        return int(round(self.mission_duration_s / self.slot_s))

    @property
    def gbs_position_m(self) -> np.ndarray:
        return np.array([0.0, 0.0, self.gbs_height_m])

    def waveform(self) -> WaveformConfig:
        spacing = self.subcarrier_spacing_khz * 1e3
        return WaveformConfig(
            carrier_frequency_hz=self.carrier_frequency_ghz * 1e9,
            subcarrier_spacing_hz=spacing,
            num_subcarriers=int(self.num_subcarriers),
            num_symbols=int(self.num_symbols),
            cp_duration_s=max(self.symbol_duration_us * 1e-6 - 1.0 / spacing, 0.0),
            total_power_w=self.tx_power_w,
            noise_psd_w_per_hz=self.noise_psd_w_per_hz,
        )

    def array(self) -> ArrayConfig:
        return ArrayConfig(int(self.array_nx), int(self.array_ny), self.element_spacing_wavelengths,
                           SPEED_OF_LIGHT / (self.carrier_frequency_ghz * 1e9))

    def coverage(self) -> Coverage:
        return Coverage(self.coverage_radius_m, self.altitude_min_m, self.altitude_max_m)

    def ctrl_fbl(self) -> FblParams:
        return FblParams(self.ctrl_blocklength, self.ctrl_bler, self.slot_s, self.ctrl_payload_bits)

    def lqg_weights(self) -> LqgWeights:
        return LqgWeights.from_scalars(self.lqg_qp, self.lqg_qv, self.lqg_r)

    def process_noise(self) -> ProcessNoise:
        return ProcessNoise(self.process_noise_pos_m2, self.process_noise_vel_m2s2)

    def replace(self, **changes) -> "Config":
        return from_mapping({**to_mapping(self), **changes})


_FIELD_TYPES = {f.name: f.type for f in fields(Config)}


def _coerce(key: str, value):
    kind = _FIELD_TYPES[key]
    try:
        if kind in ("int", int):
            if isinstance(value, bool) or (isinstance(value, float) and not value.is_integer()):
                raise ValueError
            return int(value)
        if kind in ("float", float):
            if isinstance(value, bool):
                raise ValueError
            out = float(value)
            if not math.isfinite(out):
                raise ValueError
            return out
        if kind in ("str", str):
            if not isinstance(value, str):
                raise ValueError
            return value
    except (TypeError, ValueError):
        raise ConfigError(f"invalid value {value!r}", key) from None
    return value


def from_mapping(data: dict) -> Config:
    unknown = sorted(set(data) - set(_FIELD_TYPES))
    if unknown:
        raise ConfigError("unknown key", unknown[0])
    return Config(**{k: _coerce(k, v) for k, v in data.items()})


def to_mapping(cfg: Config) -> dict:
    return dataclasses.asdict(cfg)


def load_config(path) -> Config:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {p}")
    try:
        data = yaml.safe_load(p.read_text(encoding="utf-8"))
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse {p}: {exc}") from None
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(f"{p} must contain a flat key/value mapping")
    nested = [k for k, v in data.items() if isinstance(v, (dict, list))]
    if nested:
        raise ConfigError("nested values are not allowed", str(nested[0]))
    return from_mapping({str(k): v for k, v in data.items()})


def dump_config(cfg: Config) -> str:
    return yaml.safe_dump(to_mapping(cfg), sort_keys=False, default_flow_style=False)


def save_config(cfg: Config, path) -> None:
    Path(path).write_text(dump_config(cfg), encoding="utf-8")


def config_hash(cfg: Config) -> str:
    blob = json.dumps(to_mapping(cfg), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


@dataclass
class RunManifest:
    config_hash: str
    seed: int | None
    tool_version: str
    subcommand: str
    outputs: list[str]
    config: dict

    @classmethod
    def create(cls, cfg: Config, seed, subcommand: str, outputs) -> "RunManifest":
        return cls(config_hash(cfg), seed, __version__, subcommand, [str(o) for o in outputs],
                   to_mapping(cfg))

    def write(self, path) -> None:
        Path(path).write_text(json.dumps(dataclasses.asdict(self), indent=2, sort_keys=True) + "\n",
                              encoding="utf-8")
