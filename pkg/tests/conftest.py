import numpy as np
import pytest

from skelfit import default_human_topology
from skelfit.render import RenderParams


@pytest.fixture(scope="session")
def topo():
    return default_human_topology()


@pytest.fixture
def small_params():
    # 16x16 keeps brute-force oracles fast while exercising real geometry.
    return RenderParams(width=16, height=16)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
