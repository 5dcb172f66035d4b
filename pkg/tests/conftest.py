from pathlib import Path

import pytest

from leafseg.fixture import make_leaf_fixture
from leafseg.image_core import read_image

DATA = Path(__file__).resolve().parents[1] / "data"

# filled by test_acceptance; printed at the end of the run
ACCEPTANCE_LINES: dict = {}


@pytest.fixture(scope="session")
def leaf():
    return make_leaf_fixture()


@pytest.fixture(scope="session")
def leaf_path():
    return DATA / "leaf_fixture.ppm"


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[key])
