import sys
from pathlib import Path

import pytest
from hypothesis import settings

sys.path.insert(0, str(Path(__file__).parent))

from pbgcn.graph import load_topology  # noqa: E402

settings.register_profile("default", deadline=None, max_examples=50)
settings.load_profile("default")

FIXTURES = Path(__file__).parent / "fixtures"


@pytest.fixture(scope="session")
def ntu():
    return load_topology("ntu25")


@pytest.fixture(scope="session")
def toy():
    return load_topology("toy5")


@pytest.fixture(scope="session")
def fixtures_dir():
    return FIXTURES


# One line per acceptance criterion, repeated in the terminal summary.
ACCEPTANCE: list[str] = []


@pytest.fixture
def acceptance_line():
    def record(number: int, passed: bool, detail: str) -> None:
        line = f"ACCEPTANCE {number}: {'PASS' if passed else 'FAIL'} - {detail}"
        ACCEPTANCE.append(line)
        print(line)

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
