import numpy as np
import pytest

from relaybounds.channel import default_channel
from relaybounds.netmodel import genome_bounds, get_case


@pytest.fixture(scope="session")
def channel():
    return default_channel(620.0)


@pytest.fixture(scope="session")
def channel_310():
    return default_channel(310.0)


def random_genomes(case_id, n, seed=0, d_sd=620.0):
    lo, hi = genome_bounds(get_case(case_id), d_sd)
    rng = np.random.default_rng(seed)
    return lo + rng.random((n, lo.size)) * (hi - lo)


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture(scope="session")
def acceptance():
    """Record one pass/fail line per acceptance check; they are printed after the run."""

    def record(criterion: int, name: str, passed: bool, detail: str = "") -> bool:
        line = f"criterion {criterion} {name}: {'PASS' if passed else 'FAIL'}"
        if detail:
            line += f" ({detail})"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
