import numpy as np
import pytest

from backupcbf.systems import pendulum as pend
from backupcbf.systems import scalar as scal


@pytest.fixture(scope="session")
def scalar_pair():
    return scal.scalar_backup_pair()


@pytest.fixture(scope="session")
def pendulum_pair():
    return pend.pendulum_backup_pair(pend.PendulumParams.preset("k1_k1"))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
