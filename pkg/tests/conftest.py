import numpy as np
import pytest

from pbdev.geometry import ReferencePrism


@pytest.fixture
def prism():
    return ReferencePrism()


@pytest.fixture
def rng():
    return np.random.default_rng(42)


@pytest.fixture(scope="session")
def fixture_set(tmp_path_factory):
    from pbdev.synthetic import write_fixture_set

    return write_fixture_set(tmp_path_factory.mktemp("fixtures"), seed=42, n_points=6000)


ACCEPTANCE_LINES: list = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
