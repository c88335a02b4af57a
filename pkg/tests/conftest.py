"""Collects acceptance verdicts and prints them as one PASS/FAIL line per criterion."""

import pytest

VERDICTS: dict[int, str] = {}


def record_verdict(number: int, title: str, passed: bool, detail: str = "") -> None:
    line = f"[{'PASS' if passed else 'FAIL'}] criterion {number:>2}: {title}"
    if detail:
        line += f" | {detail}"
    VERDICTS[number] = line
    print(line)


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    # a criterion test that raised before reaching its verdict still gets a FAIL line
    if mark and report.when == "call" and report.failed and mark.args[0] not in VERDICTS:
        record_verdict(mark.args[0], mark.args[1], False, f"error: {call.excinfo.typename}")


def pytest_terminal_summary(terminalreporter):
    if not VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(VERDICTS):
        terminalreporter.write_line(VERDICTS[n])
