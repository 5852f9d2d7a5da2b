import datetime as dt
import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

# filled by test_acceptance.py: criterion id -> (passed, detail)
ACCEPTANCE_RESULTS = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance: acceptance criterion check")
    for key in [*map(str, range(1, 11)), "6a", "6b", "6c"]:
        config.addinivalue_line("markers", f"criterion_{key}: acceptance criterion {key}")


def pytest_runtest_logreport(report):
    if report.when != "call" and not (report.when == "setup" and report.outcome != "passed"):
        return
    for mark in report.keywords:
        if mark.startswith("criterion_"):
            key = mark[len("criterion_"):]
            prev = ACCEPTANCE_RESULTS.get(key, True)
            ACCEPTANCE_RESULTS[key] = prev and report.passed


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE_RESULTS, key=lambda k: (int("".join(c for c in k if c.isdigit()) or 0), k)):
        status = "PASS" if ACCEPTANCE_RESULTS[key] else "FAIL"
        terminalreporter.write_line(f"criterion {key:>4}: {status}")


def write_electricity(path, rows):
    lines = ["household_id,timestamp,kwh"] + [f"{h},{ts},{v}" for h, ts, v in rows]
    Path(path).write_text("\n".join(lines) + "\n")


def full_rows(households, days, grid, value=lambda h, d, t: 0.1 * (t + 1)):
    rows = []
    for h in households:
        for d in days:
            for t, m in enumerate(grid.minutes()):
                rows.append((h, f"{d.isoformat()}T{m // 60:02d}:{m % 60:02d}", value(h, d, t)))
    return rows


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def two_days():
    return [dt.date(2014, 6, 3), dt.date(2014, 6, 4)]
