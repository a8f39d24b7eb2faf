import numpy as np
import pytest

_ACCEPTANCE = []


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_runtest_logreport(report):
    if report.when != "call" or "test_acceptance.py" not in report.nodeid:
        return
    props = dict(report.user_properties)
    # a test that dies before reporting still gets a line, keyed by its name
    crit = props.get("criterion", report.nodeid.split("::")[-1])
    _ACCEPTANCE.append((str(crit), report.passed, props.get("detail", "no summary recorded"), report.duration))


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for crit, ok, detail, dur in sorted(_ACCEPTANCE):
        terminalreporter.write_line(f"criterion {crit}: {'PASS' if ok else 'FAIL'}  ({dur:.1f}s)  {detail}")
