import numpy as np
import pytest

from robustdoa.geometry import ArrayGeometry, build_dictionary


@pytest.fixture(scope="session")
def geometry():
    return ArrayGeometry()


@pytest.fixture(scope="session")
def dict1801(geometry):
    return build_dictionary(geometry, 1801)


@pytest.fixture(scope="session")
def dict181(geometry):
    return build_dictionary(geometry, 181)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    from test_acceptance import REPORT

    if REPORT:
        terminalreporter.section("acceptance criteria")
        for key in sorted(REPORT):
            terminalreporter.write_line(REPORT[key])
