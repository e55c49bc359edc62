import os
from pathlib import Path

import pytest

from mplc.field import GridSpec
from mplc.projector import DesignStore
from mplc.wfm import WfmConfig

# One line per acceptance criterion, printed in the terminal summary.
ACCEPTANCE_LINES: list[str] = []


def record_acceptance(number: int, title: str, passed: bool, detail: str = "") -> None:
    status = "PASS" if passed else "FAIL"
    ACCEPTANCE_LINES.append(f"[{status}] criterion {number}: {title}" + (f" -- {detail}" if detail else ""))


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def grid():
    """The default 1024 x 1024, 8 um pitch, 808 nm grid."""
    return GridSpec()


@pytest.fixture(scope="session")
def small_grid():
    """Coarse grid with the same physical window, for quick optimizer tests."""
    return GridSpec(256, 256, 32e-6, 808e-9)


@pytest.fixture(scope="session")
def store(tmp_path_factory):
    """Designs shared by every test that needs full-resolution converters.

    Set MPLC_TEST_CACHE to a directory to keep converter files between runs.
    """
    cache = os.environ.get("MPLC_TEST_CACHE")
    directory = Path(cache) if cache else tmp_path_factory.mktemp("designs")
    return DesignStore(directory)


@pytest.fixture(scope="session")
def wfm_cfg():
    return WfmConfig()
