import numpy as np
import pytest

from isccsim import allocation as al
from isccsim.config import Config
from isccsim.sim import (RngStreams, Scenario, Scheme, monte_carlo, run_baseline, run_closed_loop,
                         summarize_trajectory)
from isccsim.stability import critical_alpha_ctrl
from isccsim.trajectory import cubic_spline, random_trajectory

LINE = np.array([[200.0, 100, 150], [230, 120, 160], [260, 140, 170], [290, 160, 180]])


@pytest.fixture(scope="module")
def sharp():
    """Strong sensing so the ISCC loop is well inside its stable region."""
    return Scenario.from_config(Config().replace(sensing_snr_offset_db=80.0))


@pytest.fixture(scope="module")
def sharp_traj():
    return random_trajectory(RngStreams(0).trajectory, Config().coverage(), 8.0, 500.0, 0.1)


def test_streams_independent_and_reproducible():
    a, b = RngStreams(3, 1), RngStreams(3, 1)
    assert a.fading.random() == b.fading.random()
    c = RngStreams(3, 2)
    assert RngStreams(3, 1).fading.random() != c.fading.random()
    assert RngStreams(3, 1).fading.random() != RngStreams(3, 1).drops.random()


def test_deterministic(sharp, sharp_traj):
    fr = al.ResourceFractions.from_pair(0.3, 0.3)
    r1 = run_closed_loop(sharp, fr, sharp_traj, RngStreams(4))
    r2 = run_closed_loop(sharp, fr, sharp_traj, RngStreams(4))
    np.testing.assert_array_equal(r1.error_m, r2.error_m)
    np.testing.assert_array_equal(r1.dropped, r2.dropped)
    assert r1.lqg_cost == r2.lqg_cost


def test_noise_free_loop_converges_at_lqr_rate():
    # near-exact full-state feedback, no process noise, no drops: the start-up velocity transient
    # decays at the slowest closed-loop pole
    cfg = Config().replace(process_noise_pos_m2=0.0, process_noise_vel_m2s2=0.0, gnss_pos_std_m=1e-5,
                           gnss_vel_std_ms=1e-5, mission_duration_s=30.0)
    scn = Scenario.from_config(cfg)
    res = run_closed_loop(scn, None, cubic_spline(LINE, 30.0, 0.1), RngStreams(0), Scheme.GNSS_CLOSED_LOOP)
    f = scn.matrices.A - scn.matrices.B @ scn.synthesis.K
    rho = np.max(np.abs(np.linalg.eigvals(f)))
    assert res.error_m[6] / res.error_m[3] == pytest.approx(rho ** 3, rel=0.1)
    assert np.max(res.error_m[30:]) < 1e-4
    assert res.dropped.sum() == 0


def test_noise_free_iscc_transient_decays():
    # the filter starts with zero velocity; the resulting transient dies out under feedback
    cfg = Config().replace(process_noise_pos_m2=0.0, process_noise_vel_m2s2=0.0, sensing_snr_offset_db=80.0,
                           mission_duration_s=60.0)
    scn = Scenario.from_config(cfg)
    res = run_closed_loop(scn, al.ResourceFractions.from_pair(0.3, 0.3), cubic_spline(LINE, 60.0, 0.1),
                          RngStreams(1))
    assert not res.diverged and res.dropped.sum() == 0
    assert np.max(res.error_m[-100:]) < np.max(res.error_m[:20]) / 30


def test_drop_rate_matches_eps(sharp, sharp_traj):
    # aim at a moderate drop rate using the median realized SNR of a well-served run
    probe = run_closed_loop(sharp, al.ResourceFractions.from_pair(0.5, 1e-4), sharp_traj, RngStreams(2))
    gamma = 10 ** (np.median(probe.snr_db) / 10)
    alpha = critical_alpha_ctrl(0.2, gamma, sharp.waveform.total_bandwidth_hz, sharp.config.ctrl_fbl())
    res = run_closed_loop(sharp, al.ResourceFractions.from_pair(0.5, alpha), sharp_traj, RngStreams(2))
    n = res.slots_run
    eps = res.eps_ctrl[:n]
    assert n > 500 and 0.05 < eps.mean() < 0.95
    sigma = np.sqrt(np.sum(eps * (1 - eps))) / n
    assert abs(res.dropped[:n].mean() - eps.mean()) <= 3 * sigma


def test_below_alpha_star_diverges(sharp, sharp_traj):
    summary = summarize_trajectory(sharp, sharp_traj)
    a_star = critical_alpha_ctrl(sharp.eps_star, summary.avg_gamma, sharp.waveform.total_bandwidth_hz,
                                 sharp.config.ctrl_fbl())
    res = run_closed_loop(sharp, al.ResourceFractions.from_pair(0.5, 0.5 * a_star), sharp_traj, RngStreams(3))
    assert res.diverged
    assert res.slots_run < len(sharp_traj)
    assert np.all(res.error_m[res.slots_run:] == sharp.config.divergence_threshold_m)


def test_baselines(scenario, trajectory, summary):
    gnss = run_baseline(Scheme.GNSS_CLOSED_LOOP, scenario, trajectory, RngStreams(0))
    assert 1.5 <= gnss.mean_error_m <= 3.5
    assert gnss.dropped.sum() == 0
    ol = run_baseline(Scheme.OPEN_LOOP, scenario, trajectory, RngStreams(0))
    assert not ol.diverged and ol.mean_error_m > gnss.mean_error_m
    ign = run_baseline(Scheme.ISCC_IGNORE_LOSS, scenario, trajectory, RngStreams(0), summary)
    assert ign.diverged


def test_monte_carlo_reproducible():
    cfg = Config().replace(mission_duration_s=20.0, allocation_samples=20)
    a = monte_carlo(cfg, ["gnss", "open_loop"], 3, 11)
    b = monte_carlo(cfg, ["gnss", "open_loop"], 3, 11)
    # repr compares NaN fields (no PEB for these schemes) as equal text
    assert repr(a) == repr(b)
    assert [r.scheme for r in a] == ["gnss", "open_loop"]
    with pytest.raises(ValueError):
        monte_carlo(cfg, ["gnss"], 0, 11)


def test_monte_carlo_standard_error_shrinks():
    cfg = Config().replace(mission_duration_s=20.0, allocation_samples=10)
    rows = monte_carlo(cfg, ["gnss"], 100, 5)[0]
    errs = np.array([r["mean_err_m"] for r in rows.runs])
    se25 = np.std(errs[:25], ddof=1) / 5
    se100 = np.std(errs, ddof=1) / 10
    assert 1.3 < se25 / se100 < 3.0
