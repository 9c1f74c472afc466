import math

import pytest

from gravlasov.kernel import ModelParams, make_polytrope
from gravlasov.radial import RadialGrid
from gravlasov.steady import integrate_state


@pytest.fixture(scope="session")
def spec_p2():
    return make_polytrope(2.0)


@pytest.fixture(scope="session")
def classical():
    return ModelParams(c=math.inf)


@pytest.fixture(scope="session")
def relativistic():
    return ModelParams(c=1.0)


@pytest.fixture(scope="session")
def grid_20():
    return RadialGrid(r_max=20.0, n=1025)


@pytest.fixture(scope="session")
def state_p2_cl(spec_p2, classical, grid_20):
    return integrate_state(spec_p2, classical, -1.0, -1.0, grid_20)


@pytest.fixture(scope="session")
def state_p2_rel(spec_p2, relativistic, grid_20):
    return integrate_state(spec_p2, relativistic, -1.0, -1.0, grid_20)
