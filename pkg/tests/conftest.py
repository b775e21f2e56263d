import numpy as np
import pytest

from mtkd import tensor as T


@pytest.fixture
def f64():
    with T.precision("f64"):
        yield


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


_ACCEPTANCE_LINES = []


@pytest.fixture
def record():
    def emit(line):
        print(line)
        _ACCEPTANCE_LINES.append(line)

    return emit


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE_LINES, key=lambda s: int(s.split("criterion ")[1].split(":")[0])):
            terminalreporter.write_line(line)
