"""Acceptance bookkeeping: one summary line per ``criterion``-marked test."""

import pytest

_results: dict[int, tuple[str, str, str, float]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    number, title = marker.args
    detail = "; ".join(str(v) for k, v in item.user_properties if k == "detail")
    if report.when == "setup" and report.skipped:
        reason = report.longrepr[2] if isinstance(report.longrepr, tuple) else str(report.longrepr)
        _results[number] = ("SKIP", title, reason.removeprefix("Skipped: "), 0.0)
    elif report.when == "setup" and report.failed:
        _results[number] = ("FAIL", title, "setup error", 0.0)
    elif report.when == "call":
        status = "PASS" if report.passed else ("SKIP" if report.skipped else "FAIL")
        if report.skipped and isinstance(report.longrepr, tuple):
            detail = report.longrepr[2].removeprefix("Skipped: ")
        _results[number] = (status, title, detail, report.duration)


def pytest_terminal_summary(terminalreporter):
    if not _results:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_results):
        status, title, detail, seconds = _results[number]
        line = f"[{status}] {number:2d}. {title} ({seconds:.1f}s)"
        terminalreporter.write_line(line + (f" -- {detail}" if detail else ""))
