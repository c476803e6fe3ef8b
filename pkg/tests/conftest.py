import pytest

from mrfmqc.device import paper_device, paper_geometry

ACCEPTANCE_LINES: dict = {}


@pytest.fixture
def geom():
    return paper_geometry()


@pytest.fixture
def device():
    return paper_device(1000)


@pytest.fixture
def small_device():
    return paper_device(4)


@pytest.fixture
def quiet_device():
    """Paper device with the cantilever noise switched off."""
    return paper_device(4, noise="none")


def rel(a, b):
    return abs(a - b) / abs(b)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[key])

