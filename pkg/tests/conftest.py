import sys

import numpy as np
import pytest

from tubeflow.geometry import make_circle, make_ellipse, make_flat_cylinder


@pytest.fixture(scope="session")
def circle():
    return make_circle(1.0)


@pytest.fixture(scope="session")
def ellipse():
    return make_ellipse(3.0, 2.0)


@pytest.fixture(scope="session")
def flat():
    return make_flat_cylinder(2 * np.pi)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance") or sys.modules.get("tests.test_acceptance")
    lines = getattr(mod, "ACCEPTANCE_LINES", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda x: int(x[1:3])):
            terminalreporter.write_line(line)
