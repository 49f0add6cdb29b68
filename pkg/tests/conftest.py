import numpy as np
import pytest

from effectcal import (
    ExperimentalData,
    ObservationalData,
    RngStream,
    make_basis,
    make_univariate_dgp,
)


@pytest.fixture(scope="session")
def basis():
    return make_basis("poly1")


@pytest.fixture(scope="session")
def uni_dgp():
    return make_univariate_dgp(0.3)


@pytest.fixture()
def tiny_exp():
    rng = RngStream(42, 1).generator()
    x = rng.normal(size=(20, 1))
    d = 1.0 + 2.0 * x[:, 0] + rng.normal(size=20)
    return ExperimentalData(d=d, x=x)


@pytest.fixture()
def tiny_obs():
    rng = RngStream(42, 2).generator()
    x = rng.normal(size=(50, 1))
    z = (rng.random(50) < 0.5).astype(int)
    y = x[:, 0] + z * (1.0 + x[:, 0] ** 2) + rng.normal(size=50)
    return ObservationalData(y=y, z=z, x=x)
