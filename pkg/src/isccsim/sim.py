"""Closed-loop slot simulation, baselines and Monte-Carlo aggregation."""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from enum import Enum

import numpy as np

from . import allocation as alloc
from .channel import (ArrayConfig, FadingDraw, Geometry, LinkKind, LinkState, WaveformConfig,
                      beam_gain, communication_link, ctrl_drop_probability, db_to_power_gain,
                      draw_fading, sensing_path_loss_db, shadow_sigma_db,
                      steering_beamformer)
from .config import Config, from_mapping, to_mapping
from .control import (LqgSynthesis, LqgWeights, b_min_floor, coupled_riccati_DS,
                      equivalent_noise_cov, lqg_command, rate_cost_L, synthesize)
from .dynamics import ProcessNoise, SystemMatrices, build_matrices
from .errors import UnobservableGeometryError
from .estimation import (KalmanState, Observation, initial_kalman_state,
                         kalman_predict, kalman_update, observation_matrix,
                         steady_estimation_covariance)
from .sensing import (SensingBounds, crlb_coefficients, sensing_bounds, sensing_noise_variance,
                      spatial_signature)
from .stability import build_stability_matrix, critical_alpha_ctrl, critical_eps, spectral_radius
from .trajectory import ReferenceTrajectory, random_trajectory

STREAMS = ("trajectory", "fading", "shadowing", "process", "observation", "drops", "ga")


class Scheme(str, Enum):
    ISCC_CLOSED_LOOP = "iscc"
    OPEN_LOOP = "open_loop"
    GNSS_CLOSED_LOOP = "gnss"
    ISCC_IGNORE_LOSS = "ignore_loss"


class RngStreams:
    """Independent named generators derived from one seed and a run index."""

    def __init__(self, seed: int, run: int = 0):
        self.seed, self.run = int(seed), int(run)
        for i, name in enumerate(STREAMS):
            ss = np.random.SeedSequence(self.seed, spawn_key=(self.run, i))
            setattr(self, name, np.random.default_rng(ss))


@dataclass(frozen=True)
class Scenario:
    """Everything derived once from a configuration."""

    config: Config
    waveform: WaveformConfig
    array: ArrayConfig
    matrices: SystemMatrices
    weights: LqgWeights
    synthesis: LqgSynthesis
    process_noise: ProcessNoise
    sensing_noise_var: float
    eps_star: float

    @classmethod
    def from_config(cls, cfg: Config) -> "Scenario":
        mats = build_matrices(cfg.slot_s)
        weights = cfg.lqg_weights()
        syn = synthesize(mats.A, mats.B, weights)
        wf = cfg.waveform()
        return cls(cfg, wf, cfg.array(), mats, weights, syn, cfg.process_noise(),
                   sensing_noise_variance(wf, cfg.sensing_noise_mode),
                   critical_eps(mats.A, mats.B, syn.K))

    # ---- link helpers --------------------------------------------------------

    def relative(self, position) -> np.ndarray:
        return np.asarray(position, dtype=float) - self.config.gbs_position_m

    def comm_link(self, geo: Geometry, w, fading: FadingDraw) -> LinkState:
        return communication_link(geo, fading, w, self.array, self.waveform)

    def sensing_link(self, geo: Geometry, w, fading: FadingDraw) -> LinkState:
        cfg = self.config
        loss = sensing_path_loss_db(geo.range_m, cfg.carrier_frequency_ghz, cfg.rcs_m2,
                                    self.waveform.wavelength_m)
        beta = float(db_to_power_gain(loss + fading.shadow_db - cfg.sensing_snr_offset_db))
        tx = beam_gain(geo.azimuth_rad, geo.elevation_rad, np.conj(w), self.array)
        return LinkState(geo, fading, tx, beta)

    def bounds(self, geo: Geometry, w, fading: FadingDraw, alpha_sen: float) -> SensingBounds:
        link = self.sensing_link(geo, w, fading)
        sig = spatial_signature(geo.azimuth_rad, geo.elevation_rad, w, self.array)
        return sensing_bounds(link, self.waveform, alpha_sen, sig, self.sensing_noise_var)


_UNIT_FADE_COMM = FadingDraw(1.0 + 0j, 0.0, LinkKind.COMMUNICATION)
_UNIT_FADE_SENS = FadingDraw(1.0 + 0j, 0.0, LinkKind.SENSING)


@dataclass(frozen=True)
class TrajectorySummary:
    avg_gamma: float
    profile: alloc.SensingProfile
    min_gamma: float = float("nan")


def summarize_trajectory(scn: Scenario, traj: ReferenceTrajectory, samples: int | None = None) -> TrajectorySummary:
    """Average SNR and CRLB coefficients along the reference with matched beams and mean fading."""
    n = len(traj)
    samples = scn.config.allocation_samples if samples is None else samples
    idx = np.unique(np.linspace(0, n - 1, min(samples, n)).round().astype(int))
    gammas, rc, ac, vc = [], [], [], []
    for i in idx:
        geo = Geometry.from_position(scn.relative(traj.positions[i]))
        w = steering_beamformer(geo.azimuth_rad, geo.elevation_rad, scn.array)
        gammas.append(scn.comm_link(geo, w, _UNIT_FADE_COMM).snr_linear)
        link = scn.sensing_link(geo, w, _UNIT_FADE_SENS)
        sig = spatial_signature(geo.azimuth_rad, geo.elevation_rad, w, scn.array)
        try:
            co = crlb_coefficients(link, scn.waveform, sig, scn.sensing_noise_var)
        except UnobservableGeometryError:
            continue
        rc.append(co.range_coeff)
        ac.append(co.angle_coeff)
        vc.append(co.velocity_coeff)
    return TrajectorySummary(float(np.mean(gammas)),
                             alloc.SensingProfile(np.array(rc), np.array(ac), np.array(vc)),
                             float(np.min(gammas)))


def build_problem(scn: Scenario, summary: TrajectorySummary, ignore_loss: bool = False) -> alloc.AllocationProblem:
    cfg = scn.config
    fbl = cfg.ctrl_fbl()
    bw = scn.waveform.total_bandwidth_hz
    alpha_star = 0.0 if ignore_loss else critical_alpha_ctrl(scn.eps_star, summary.avg_gamma, bw, fbl)
    # the stability test assumes i.i.d. drops; along a trajectory the SNR drifts slowly, so
    # the floor must also hold on the weakest stretch or drops arrive in long bursts
    robust = 0.0
    if not ignore_loss and np.isfinite(summary.min_gamma):
        robust = critical_alpha_ctrl(scn.eps_star, summary.min_gamma, bw, fbl)
    problem = alloc.AllocationProblem(
        profile=summary.profile, num_subcarriers=scn.waveform.num_subcarriers, bandwidth_hz=bw,
        avg_gamma=summary.avg_gamma, ctrl_fbl=fbl, comm_blocklength=cfg.comm_blocklength,
        comm_bler=cfg.comm_bler, min_comm_rate_bps=cfg.comm_min_rate_mbps * 1e6,
        alpha_ctrl_star=alpha_star, alpha_ctrl_robust=robust, rate_cost_bits=0.0, min_fraction=cfg.min_fraction,
        stability_margin=cfg.stability_margin, ignore_loss=ignore_loss,
        sca=alloc.ScaConfig(cfg.sca_rho, cfg.sca_tol, cfg.sca_max_iter))
    bits = rate_cost_bits(scn, summary, problem)
    return alloc.AllocationProblem(**{**problem.__dict__, "rate_cost_bits": bits})


def steady_sigma_est(scn: Scenario, summary: TrajectorySummary, alpha_sen: float, traj=None) -> np.ndarray:
    """Posterior KF covariance for a representative geometry and mean CRLB."""
    n = alpha_sen * scn.waveform.num_subcarriers
    prof = summary.profile
    tr = float(np.mean(prof.trace_samples(n)))
    crlb_v = float(np.mean(prof.velocity_coeff / n))
    c = observation_matrix(np.array([0.0, 0.0, 1.0]) if traj is None else
                           Geometry.from_position(scn.relative(np.mean(traj.positions, axis=0))).los_unit_vector)
    r = np.diag([tr / 3.0] * 3 + [crlb_v])
    return steady_estimation_covariance(scn.matrices, scn.process_noise, c, r)


def rate_cost_bits(scn: Scenario, summary: TrajectorySummary, problem: alloc.AllocationProblem,
                   alpha_sen: float = 0.15) -> float:
    """L(b) at the configured target cost (bits per slot)."""
    mats, syn = scn.matrices, scn.synthesis
    eps = 0.0 if problem.ignore_loss else ctrl_drop_probability(
        max(problem.ctrl_lower, 1e-12), summary.avg_gamma, problem.bandwidth_hz, problem.ctrl_fbl)
    eps = min(eps, scn.eps_star)
    d, _ = coupled_riccati_DS(mats.A, mats.B, scn.weights.Q, scn.weights.R, eps)
    sig_est = steady_sigma_est(scn, summary, max(alpha_sen, problem.sen_lower))
    sto = equivalent_noise_cov(scn.process_noise.covariance, mats.B, syn.K, sig_est, eps)
    b_min = b_min_floor(syn.P, scn.process_noise.covariance)
    return rate_cost_L(scn.config.lqg_target_over_floor * b_min, mats.A, d, sto, b_min)


# ---------------------------------------------------------------------------
# Closed-loop run
# ---------------------------------------------------------------------------


@dataclass
class SimResult:
    scheme: str
    error_m: np.ndarray
    dropped: np.ndarray
    eps_ctrl: np.ndarray
    snr_db: np.ndarray
    lqg_cost: float
    diverged: bool
    slots_run: int
    peb_m: float = float("nan")
    nees: float = float("nan")

    @property
    def mean_error_m(self) -> float:
        return float(np.mean(self.error_m))

    @property
    def max_error_m(self) -> float:
        return float(np.max(self.error_m))


def _clamp(u, limit):
    return np.clip(u, -limit, limit) if limit > 0 else u


def _gnss_model(cfg: Config):
    return np.eye(6), np.diag([cfg.gnss_pos_std_m ** 2] * 3 + [cfg.gnss_vel_std_ms ** 2] * 3)


def run_closed_loop(scn: Scenario, fractions: alloc.ResourceFractions | None, traj: ReferenceTrajectory,
                    streams: RngStreams, scheme: Scheme = Scheme.ISCC_CLOSED_LOOP,
                    record_nees: bool = False) -> SimResult:
    """Slot loop: sense, estimate, command, drop, actuate."""
    cfg = scn.config
    mats, K = scn.matrices, scn.synthesis.K
    a, b = mats.A, mats.B
    n_slots = len(traj)
    ref = traj.states
    bw = scn.waveform.total_bandwidth_hz
    fbl = cfg.ctrl_fbl()
    k_db = cfg.rician_k_db
    thr = cfg.divergence_threshold_m
    noise_std = np.sqrt(np.diag(scn.process_noise.covariance))
    gnss_c, gnss_r = _gnss_model(cfg)
    iscc = scheme in (Scheme.ISCC_CLOSED_LOOP, Scheme.ISCC_IGNORE_LOSS)

    err = np.full(n_slots, thr)
    dropped = np.zeros(n_slots, dtype=np.int8)
    eps_log = np.full(n_slots, np.nan)
    snr_log = np.full(n_slots, np.nan)
    stage = np.zeros(n_slots)
    peb_sum, peb_cnt = 0.0, 0
    nees_sum, nees_cnt = 0.0, 0

    x = ref[0].copy()
    kf: KalmanState | None = None
    u_applied = np.zeros(3)
    beam_dir = None
    diverged = False
    n_run = n_slots
    for n in range(n_slots):
        e = x - ref[n]
        err[n] = float(np.linalg.norm(e[:3]))
        if not np.isfinite(err[n]) or err[n] > thr:
            err[n:] = thr
            diverged = True
            n_run = n
            break

        if scheme is Scheme.OPEN_LOOP:
            u = (ref[min(n + 1, n_slots - 1)][3:] - ref[n][3:]) / mats.dt_s if n + 1 < n_slots else np.zeros(3)
            u_applied = _clamp(u, cfg.actuator_limit_ms2)
            dropped[n] = 0
        else:
            if iscc:
                geo = Geometry.from_position(scn.relative(x[:3]))
                if beam_dir is None:
                    beam_dir = (geo.azimuth_rad, geo.elevation_rad)
                w = steering_beamformer(*beam_dir, scn.array)
                sigma_sf = float(shadow_sigma_db(x[2], cfg.shadow_coeff_db, cfg.shadow_decay_per_m))
                g_c = draw_fading(streams.fading, k_db, 0.0, LinkKind.COMMUNICATION).small_scale_gain
                g_s = draw_fading(streams.fading, k_db, 0.0, LinkKind.SENSING).small_scale_gain
                sh = streams.shadowing.normal(0.0, sigma_sf, size=2)
                comm = scn.comm_link(geo, w, FadingDraw(g_c, float(sh[0]), LinkKind.COMMUNICATION))
                gamma = comm.snr_linear
                snr_log[n] = 10 * math.log10(gamma) if gamma > 0 else -math.inf
                obs_noise = streams.observation.standard_normal(4)
                try:
                    bnd = scn.bounds(geo, w, FadingDraw(g_s, float(sh[1]), LinkKind.SENSING),
                                     fractions.alpha_sen)
                    obs = _observation(x, geo.los_unit_vector, bnd, obs_noise)
                    peb_sum += bnd.peb_m
                    peb_cnt += 1
                except UnobservableGeometryError:
                    obs = None
            else:
                gamma = math.inf
                obs_noise = streams.observation.standard_normal(6)
                obs = Observation(gnss_c @ x + np.sqrt(np.diag(gnss_r)) * obs_noise, gnss_c, gnss_r)

            if kf is None:
                if obs is None:
                    kf = KalmanState(np.concatenate([x[:3], np.zeros(3)]), np.diag([1e6] * 3 + [10.0] * 3))
                else:
                    kf = initial_kalman_state(obs, cfg.kf_init_velocity_var_m2s2)
            else:
                kf = kalman_predict(kf, u_applied, mats, scn.process_noise)
                if obs is not None:
                    kf = kalman_update(kf, obs)
            if record_nees:
                ee = x - kf.estimate
                nees_sum += float(ee @ np.linalg.solve(kf.covariance, ee))
                nees_cnt += 1
            if iscc:
                est_geo = Geometry.from_position(scn.relative(kf.estimate[:3]))
                beam_dir = (est_geo.azimuth_rad, est_geo.elevation_rad)

            u = lqg_command(kf.estimate, ref[n], K)
            if scheme is Scheme.GNSS_CLOSED_LOOP:
                eps_n = 0.0
            else:
                eps_n = float(ctrl_drop_probability(fractions.alpha_ctrl, gamma, bw, fbl))
            eps_log[n] = eps_n
            delivered = streams.drops.random() >= eps_n
            dropped[n] = 0 if delivered else 1
            u_applied = _clamp(u, cfg.actuator_limit_ms2) if delivered else np.zeros(3)

        stage[n] = e @ scn.weights.Q @ e + u_applied @ scn.weights.R @ u_applied
        x = a @ x + b @ u_applied + noise_std * streams.process.standard_normal(6)

    cost = float(np.mean(stage[:n_run])) if n_run > 0 else float("nan")
    return SimResult(scheme.value, err, dropped, eps_log, snr_log, cost, diverged, n_run,
                     peb_sum / peb_cnt if peb_cnt else float("nan"),
                     nees_sum / nees_cnt if nees_cnt else float("nan"))


def _observation(x, los, bnd: SensingBounds, z) -> Observation:
    c = observation_matrix(los)
    r = np.zeros((4, 4))
    r[:3, :3] = bnd.crlb_position_m2
    r[3, 3] = bnd.crlb_radial_velocity_m2s2
    vals, vecs = np.linalg.eigh(0.5 * (r + r.T))
    root = vecs * np.sqrt(np.clip(vals, 0.0, None))
    return Observation(c @ x + root @ z, c, r)


# ---------------------------------------------------------------------------
# Baselines and Monte Carlo
# ---------------------------------------------------------------------------


def allocate(scn: Scenario, summary: TrajectorySummary, ignore_loss: bool = False) -> alloc.AllocationResult:
    return alloc.sca_solve(build_problem(scn, summary, ignore_loss))


def run_baseline(scheme: Scheme, scn: Scenario, traj: ReferenceTrajectory, streams: RngStreams,
                 summary: TrajectorySummary | None = None) -> SimResult:
    if scheme in (Scheme.OPEN_LOOP, Scheme.GNSS_CLOSED_LOOP):
        return run_closed_loop(scn, None, traj, streams, scheme)
    summary = summary or summarize_trajectory(scn, traj)
    fr = allocate(scn, summary, ignore_loss=scheme is Scheme.ISCC_IGNORE_LOSS).fractions
    return run_closed_loop(scn, fr, traj, streams, scheme)


def run_one(cfg_map: dict, base_seed: int, run: int, schemes: tuple[str, ...],
            fractions: tuple[float, float] | None = None) -> dict:
    """One Monte-Carlo realization: a shared trajectory and common random numbers for every scheme."""
    scn = Scenario.from_config(from_mapping(cfg_map))
    traj = random_trajectory(RngStreams(base_seed, run).trajectory, scn.config.coverage(),
                             scn.config.spline_mean_waypoints, scn.config.mission_duration_s,
                             scn.config.slot_s)
    summary = summarize_trajectory(scn, traj)
    out = {}
    for name in schemes:
        scheme = Scheme(name)
        streams = RngStreams(base_seed, run)
        if scheme is Scheme.ISCC_CLOSED_LOOP and fractions is not None:
            res = run_closed_loop(scn, alloc.ResourceFractions.from_pair(*fractions), traj, streams, scheme)
        else:
            res = run_baseline(scheme, scn, traj, streams, summary)
        out[name] = {"mean_err_m": res.mean_error_m, "lqg_cost": res.lqg_cost, "diverged": res.diverged,
                     "peb_m": res.peb_m, "drop_rate": float(np.mean(res.dropped[:res.slots_run]))
                     if res.slots_run else float("nan")}
    return out


@dataclass(frozen=True)
class AggregateRow:
    scheme: str
    mean_err_m: float
    std_err_m: float
    lqg_cost: float
    diverged_frac: float
    runs: tuple


def monte_carlo(cfg: Config, schemes, n_runs: int, base_seed: int, jobs: int = 1,
                fractions: tuple[float, float] | None = None) -> list[AggregateRow]:
    if n_runs < 1:
        raise ValueError("n_runs must be >= 1")
    names = tuple(Scheme(s).value for s in schemes)
    args = [(to_mapping(cfg), base_seed, r, names, fractions) for r in range(n_runs)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(run_one, *zip(*args)))
    else:
        results = [run_one(*a) for a in args]
    rows = []
    for name in names:
        runs = tuple(r[name] for r in results)
        errs = np.array([r["mean_err_m"] for r in runs])
        costs = np.array([r["lqg_cost"] for r in runs])
        rows.append(AggregateRow(name, float(np.mean(errs)),
                                 float(np.std(errs, ddof=1)) if len(errs) > 1 else 0.0,
                                 float(np.mean(costs)), float(np.mean([r["diverged"] for r in runs])), runs))
    return rows


def loop_spectral_radius(scn: Scenario, eps: float) -> float:
    m = scn.matrices
    return spectral_radius(build_stability_matrix(m.A, m.B, scn.synthesis.K, eps))


def average_echo_snr_db(scn: Scenario, traj: ReferenceTrajectory, samples: int = 100) -> float:
    """Mean per-sample echo SNR P_k beta_S ||eta||^2 / sigma^2 with matched beams (dB)."""
    idx = np.unique(np.linspace(0, len(traj) - 1, min(samples, len(traj))).round().astype(int))
    vals = []
    for i in idx:
        geo = Geometry.from_position(scn.relative(traj.positions[i]))
        w = steering_beamformer(geo.azimuth_rad, geo.elevation_rad, scn.array)
        link = scn.sensing_link(geo, w, _UNIT_FADE_SENS)
        sig = spatial_signature(geo.azimuth_rad, geo.elevation_rad, w, scn.array)
        eta2 = float(np.vdot(sig.eta, sig.eta).real)
        vals.append(scn.waveform.per_subcarrier_power_w * link.path_gain_linear * eta2 / scn.sensing_noise_var)
    return 10.0 * math.log10(float(np.mean(vals)))


def _fixed_pair_task(cfg_map: dict, base_seed: int, run: int, pair: tuple[float, float]) -> dict:
    return run_one(cfg_map, base_seed, run, (Scheme.ISCC_CLOSED_LOOP.value,), pair)[Scheme.ISCC_CLOSED_LOOP.value]


def sweep_fixed_fractions(cfg: Config, pairs, n_runs: int, base_seed: int, jobs: int = 1) -> list[dict]:
    """Mean tracking error, LQG cost and PEB for fixed (alpha_sen, alpha_ctrl) pairs."""
    tasks = [(to_mapping(cfg), base_seed, r, tuple(p)) for p in pairs for r in range(n_runs)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            flat = list(pool.map(_fixed_pair_task, *zip(*tasks)))
    else:
        flat = [_fixed_pair_task(*t) for t in tasks]
    rows = []
    for i, p in enumerate(pairs):
        chunk = flat[i * n_runs:(i + 1) * n_runs]
        rows.append({"alpha_sen": p[0], "alpha_ctrl": p[1],
                     "mean_err_m": float(np.mean([c["mean_err_m"] for c in chunk])),
                     "lqg_cost": float(np.mean([c["lqg_cost"] for c in chunk])),
                     "peb_m": float(np.mean([c["peb_m"] for c in chunk])),
                     "diverged_frac": float(np.mean([c["diverged"] for c in chunk]))})
    return rows
