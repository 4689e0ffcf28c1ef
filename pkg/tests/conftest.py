"""Collects per-criterion outcomes from tests marked ``criterion(k)`` and prints
one PASS/FAIL line per criterion after the run."""

from collections import defaultdict

import pytest

_outcomes = defaultdict(list)
_details = defaultdict(list)


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(k): numbered acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    report = (yield).get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    k = mark.args[0]
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        _outcomes[k].append(report.outcome == "passed")
        for name, value in item.user_properties:
            if name == "detail":
                _details[k].append(value)
        if report.outcome == "failed" and report.when == "call":
            msg = str(call.excinfo.value).splitlines()[0] if call.excinfo else ""
            _details[k].append(f"failed: {msg}")


def pytest_terminal_summary(terminalreporter):
    if not _outcomes:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(_outcomes):
        status = "PASS" if all(_outcomes[k]) else "FAIL"
        detail = "; ".join(_details[k])
        terminalreporter.write_line(f"criterion {k:>2}: {status}  {detail}")
