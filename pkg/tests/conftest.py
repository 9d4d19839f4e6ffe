import sys
from pathlib import Path

import numpy as np
import pytest

# Make the brute-force oracles importable as a plain module.
sys.path.insert(0, str(Path(__file__).parent))

_CRITERIA: dict[int, str] = {}


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def record_criterion():
    """Store one summary line per acceptance criterion and echo it."""

    def record(number: int, status: str, detail: str) -> None:
        line = f"criterion {number:>2}: {status:<4}  {detail}"
        _CRITERIA[number] = line
        print(line)

    return record


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for n in sorted(_CRITERIA):
            terminalreporter.write_line(_CRITERIA[n])
