import os
import sys

_ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
sys.path.insert(0, _ROOT)

import numpy as np
import pytest

from absf.deployment import BaseStation, Deployment, generate_grid_deployment
from absf.harness import Scenario
from absf.states import Group, Network, Snapshot


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def grid():
    return generate_grid_deployment()


@pytest.fixture
def network(grid):
    return Network(grid)


@pytest.fixture
def constant_noise_network(grid):
    return Network(grid, noise_model="constant")


@pytest.fixture
def two_cell_network():
    stations = (
        BaseStation(id=0, x_m=50.0, y_m=75.0, tx_power_dbm=24.0),
        BaseStation(id=1, x_m=100.0, y_m=75.0, tx_power_dbm=24.0),
    )
    return Network(Deployment(stations=stations, area_m=(150.0, 150.0)))


@pytest.fixture
def static_snapshot():
    """Ten collocated-member groups of sizes 1..5 at fixed points of the 150 m square."""
    points = [(20, 30), (40, 110), (60, 70), (75, 75), (90, 20), (110, 130), (130, 60), (70, 140), (30, 75), (120, 100)]
    sizes = [1, 2, 3, 4, 5, 1, 2, 3, 4, 5]
    return Snapshot(tuple(Group(i, s, (float(x), float(y))) for i, ((x, y), s) in enumerate(zip(points, sizes))))


@pytest.fixture
def tiny_scenario(tmp_path):
    """Three-station grid, six static groups, short runs."""
    return Scenario.model_validate(
        {
            "name": "tiny",
            "deployment": {"kind": "grid", "n_stations": 3},
            "groups": {"count": 6, "member_radius_m": 0.0},
            "mobility": {"model": "static"},
            "sim": {"duration_s": 1.0, "t_interval_ms": 100.0, "ci_batches": 5},
            "optimizer": {"raster_resolution_m": 10.0},
            "validation": {"subframes": 2000, "n_states": 3, "group_sizes": [1, 2]},
            "policies": ["legacy"],
            "seeds": [0, 1],
            "output": {"dir": str(tmp_path / "out")},
        }
    )
