import numpy as np
import pytest

from resmarkov.model import BathSpec, qubit, three_level


@pytest.fixture
def bath():
    return BathSpec(1.0)


@pytest.fixture
def qb():
    return qubit(1.0, "sigma_x")


@pytest.fixture
def tl():
    return three_level()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
