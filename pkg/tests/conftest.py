from __future__ import annotations

import pytest

from obslearn.gridmap import BUNDLED_MAPS, bundled_map


@pytest.fixture(scope="session")
def level1():
    return bundled_map("level1")


@pytest.fixture(scope="session", params=BUNDLED_MAPS)
def any_map(request):
    return bundled_map(request.param)


@pytest.fixture(scope="session", params=[m for m in BUNDLED_MAPS if m != "nine_rooms"])
def small_map(request):
    return bundled_map(request.param)


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance") or sys.modules.get("tests.test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(mod.RESULTS):
        terminalreporter.write_line(mod.RESULTS[n])
