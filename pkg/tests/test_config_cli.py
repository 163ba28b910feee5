import csv
import json
import subprocess
import sys

import pytest

from isccsim.cli import dispatch
from isccsim.config import Config, RunManifest, config_hash, dump_config, from_mapping, load_config, save_config
from isccsim.errors import ConfigError

FAST = {"mission_duration_s": 20.0, "allocation_samples": 20}


@pytest.fixture
def fast_cfg(tmp_path):
    path = tmp_path / "fast.yaml"
    save_config(Config().replace(**FAST), path)
    return path


def test_empty_file_gives_defaults(tmp_path):
    p = tmp_path / "empty.yaml"
    p.write_text("")
    assert load_config(p) == Config()


def test_unit_conversion():
    cfg = Config()
    assert cfg.tx_power_w == pytest.approx(15.85, abs=0.01)
    assert cfg.waveform().per_subcarrier_power_w * 100 == pytest.approx(cfg.tx_power_w)
    assert cfg.num_slots == 5000


def test_errors_name_the_key(tmp_path):
    with pytest.raises(ConfigError, match="bandwidth_mhz"):
        Config(bandwidth_mhz=-10.0)
    with pytest.raises(ConfigError, match="not_a_key"):
        from_mapping({"not_a_key": 1})
    with pytest.raises(ConfigError, match="num_symbols"):
        from_mapping({"num_symbols": 6.5})
    with pytest.raises(ConfigError, match="ctrl_bler"):
        from_mapping({"ctrl_bler": 1.5})
    nested = tmp_path / "nested.yaml"
    nested.write_text("radio:\n  bandwidth_mhz: 10\n")
    with pytest.raises(ConfigError, match="nested"):
        load_config(nested)
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.yaml")


def test_round_trip(tmp_path):
    cfg = Config().replace(lqg_qp=2e4, rcs_m2=0.02)
    p = tmp_path / "cfg.yaml"
    save_config(cfg, p)
    back = load_config(p)
    assert back == cfg
    assert config_hash(back) == config_hash(cfg)
    assert config_hash(Config()) != config_hash(cfg)
    assert "lqg_qp" in dump_config(cfg)


def test_manifest(tmp_path):
    m = RunManifest.create(Config(), 3, "simulate", ["a.csv"])
    m.write(tmp_path / "m.json")
    data = json.loads((tmp_path / "m.json").read_text())
    assert data["seed"] == 3 and data["outputs"] == ["a.csv"] and data["config_hash"] == config_hash(Config())


def test_exit_codes(tmp_path, fast_cfg, capsys):
    assert dispatch([]) == 64
    assert dispatch(["bogus"]) == 64
    assert dispatch(["simulate", "--scheme", "nope"]) == 64
    assert dispatch(["--help"]) == 0
    bad = tmp_path / "bad.yaml"
    bad.write_text("bandwidth_mhz: -1\n")
    assert dispatch(["trajectory", "--config", str(bad), "--out", str(tmp_path)]) == 2
    infeasible = tmp_path / "inf.yaml"
    save_config(Config().replace(comm_min_rate_mbps=1e6, **FAST), infeasible)
    assert dispatch(["allocate", "--config", str(infeasible), "--out", str(tmp_path)]) == 2
    assert dispatch(["trajectory", "--config", str(fast_cfg), "--out", str(tmp_path / "ok")]) == 0


def _read(path):
    raw = path.read_bytes()
    assert b"\r\n" not in raw
    return list(csv.reader(raw.decode().splitlines()))


def test_simulate_outputs_and_reproducibility(tmp_path, fast_cfg):
    runs = []
    for tag in ("a", "b"):
        out = tmp_path / tag
        code = dispatch(["simulate", "--scheme", "gnss", "--runs", "2", "--per-run", "--seed", "7",
                         "--config", str(fast_cfg), "--out", str(out)])
        assert code == 0
        runs.append(out)
    rows = _read(runs[0] / "simulate_aggregate.csv")
    assert rows[0] == ["scheme", "mean_err_m", "std_err_m", "lqg_cost", "diverged_frac"]
    assert rows[1][0] == "gnss"
    per = _read(runs[0] / "run_000_gnss.csv")
    assert per[0] == ["n", "t", "err_m", "dropped", "eps_ctrl_n", "snr_db"]
    assert len(per) == 201
    manifest = json.loads((runs[0] / "manifest_simulate.json").read_text())
    assert "simulate_aggregate.csv" in manifest["outputs"]
    for name in manifest["outputs"]:
        assert (runs[0] / name).read_bytes() == (runs[1] / name).read_bytes()


def test_allocate_and_trajectory_outputs(tmp_path, fast_cfg):
    assert dispatch(["allocate", "--method", "sca", "--config", str(fast_cfg), "--out", str(tmp_path)]) == 0
    res = json.loads((tmp_path / "allocation_sca.json").read_text())
    assert sum(res["fractions"].values()) == pytest.approx(1.0)
    assert res["converged"] and min(res["feasibility"].values()) >= 0
    assert dispatch(["trajectory", "--config", str(fast_cfg), "--out", str(tmp_path)]) == 0
    traj = _read(tmp_path / "trajectory.csv")
    assert len(traj) == 201
    assert (tmp_path / "manifest_allocate.json").is_file() and (tmp_path / "manifest_trajectory.json").is_file()


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "isccsim", "nope"], capture_output=True, text=True)
    assert proc.returncode == 64
    assert "unknown subcommand" in proc.stderr
