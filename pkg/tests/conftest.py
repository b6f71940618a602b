import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from risplan.channel import RadioParams
from risplan.dataset import ScenarioConfig
from risplan.geometry import GridSpec, Point3, Region
from risplan.solver import ConstraintSet


@pytest.fixture(scope="session")
def desk_region() -> Region:
    return Region(0.0, 100.0, 0.0, 100.0, 2.0, 10.0)


@pytest.fixture(scope="session")
def desk_params() -> RadioParams:
    return RadioParams()


@pytest.fixture(scope="session")
def desk_constraints(desk_region) -> ConstraintSet:
    # d_min = one grid cell diagonal of the 4x4x3 grid over the desk region
    return ConstraintSet(l_count=2, d_min=47.30985333122713, region=desk_region)


@pytest.fixture(scope="session")
def desk_scenario_config(desk_region) -> ScenarioConfig:
    return ScenarioConfig(
        region=desk_region,
        grid_spec=GridSpec(4, 4, 3),
        n_users=3,
        n_obstacles=3,
        bs=Point3(10.0, 50.0, 9.0),
        seed=0,
    )
