import pytest

from busyldp.models import gaussian, lattice, two_point


@pytest.fixture(scope="session")
def tp():
    return two_point(0.3)


@pytest.fixture(scope="session")
def gs():
    return gaussian(-1.0, 1.0)


@pytest.fixture(scope="session")
def down_only():
    return lattice([-1], [1.0])
