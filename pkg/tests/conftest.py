import numpy as np
import pytest

from fieldtrack.vehicle import SlipParams, VehicleGeometry


@pytest.fixture
def geom():
    return VehicleGeometry()


@pytest.fixture
def unit_slip():
    return SlipParams(1.0, 1.0, 1.0)


@pytest.fixture
def rng():
    return np.random.default_rng(42)
