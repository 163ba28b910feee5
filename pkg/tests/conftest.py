import numpy as np
import pytest

from isccsim.config import Config
from isccsim.sim import RngStreams, Scenario, summarize_trajectory
from isccsim.trajectory import random_trajectory


@pytest.fixture(scope="session")
def cfg():
    return Config()


@pytest.fixture(scope="session")
def scenario(cfg):
    return Scenario.from_config(cfg)


@pytest.fixture(scope="session")
def trajectory(cfg):
    return random_trajectory(RngStreams(0).trajectory, cfg.coverage(), cfg.spline_mean_waypoints,
                             cfg.mission_duration_s, cfg.slot_s)


@pytest.fixture(scope="session")
def summary(scenario, trajectory):
    return summarize_trajectory(scenario, trajectory)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
