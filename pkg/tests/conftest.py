import pytest

from gridmomentum import fixtures
from gridmomentum.powerflow import equilibrium


@pytest.fixture(scope="session")
def two_machine_case():
    return fixtures.two_machine()


@pytest.fixture(scope="session")
def two_machine_eq(two_machine_case):
    return equilibrium(two_machine_case)


@pytest.fixture(scope="session")
def lossless_case():
    return fixtures.two_machine(lossless=True)


@pytest.fixture(scope="session")
def lossless_eq(lossless_case):
    return equilibrium(lossless_case)


@pytest.fixture(scope="session")
def conv_case():
    return fixtures.two_machine_conv()


@pytest.fixture(scope="session")
def conv_eq(conv_case):
    return equilibrium(conv_case)


@pytest.fixture(scope="session")
def ieee39_case():
    return fixtures.ieee39()


@pytest.fixture(scope="session")
def ieee39_eq(ieee39_case):
    return equilibrium(ieee39_case)
