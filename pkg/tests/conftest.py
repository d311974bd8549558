import numpy as np
import pytest

from gasket_bhi.geometry import F_MINUS, F_PLUS, build_window


@pytest.fixture(scope="session")
def g3():
    return build_window(F_PLUS, 3)


@pytest.fixture(scope="session")
def g5():
    return build_window(F_PLUS, 5)


@pytest.fixture(scope="session")
def both4():
    return build_window((F_PLUS, F_MINUS), 4)


@pytest.fixture
def rng():
    return np.random.default_rng(7)


def pytest_terminal_summary(terminalreporter):
    from test_acceptance import RESULTS
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for n in sorted(RESULTS):
            terminalreporter.write_line(RESULTS[n])
