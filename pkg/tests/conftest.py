import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(__file__))

# criterion number -> list of (label, passed)
CRITERIA: dict[int, list[tuple[str, bool]]] = {}


def pytest_runtest_makereport(item, call):
    marker = item.get_closest_marker("criterion")
    if marker is None or call.when != "call":
        return
    label = item.callspec.id if hasattr(item, "callspec") else item.name
    CRITERIA.setdefault(marker.args[0], []).append((label, call.excinfo is None))


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion number")


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(CRITERIA):
        results = CRITERIA[n]
        failed = [label for label, ok in results if not ok]
        status = "PASS" if not failed else "FAIL"
        detail = f" (failing: {', '.join(failed)})" if failed else ""
        terminalreporter.write_line(f"criterion {n:>2}: {status} [{len(results) - len(failed)}/{len(results)}]{detail}")


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(20240315)
