import os

import pytest
from hypothesis import HealthCheck, settings

from hyshuffle.engine import tpch

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

# tiny dbgen-style dataset shared by the engine tests
MICRO_SIZES = tpch.TpchSizes(part=250, supplier=10, customer=100, orders=700)


@pytest.fixture(scope="session")
def micro_tables():
    return tpch.generate(MICRO_SIZES, seed=7, tables=["part", "orders", "lineitem"])


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def criterion():
    """Record one PASS/FAIL line per acceptance criterion, then assert it."""

    def check(number: int, ok: bool, detail: str) -> None:
        line = f"{'PASS' if ok else 'FAIL'} criterion {number}: {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        assert ok, line

    return check


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
