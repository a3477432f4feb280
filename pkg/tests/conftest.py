"""Prints one pass/fail line per acceptance criterion at the end of the run.

Acceptance tests carry ``@pytest.mark.criterion(id, title)`` and may attach a
``detail`` string with ``record_property``; the summary shows it next to the
outcome, so the measured values are visible for red criteria as well.
"""
import pytest

_results = []


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(id, title): acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or report.when != "call":
        return
    cid, title = marker.args
    detail = dict(item.user_properties).get("detail", "")
    _results.append((cid, title, report.passed, detail))


def pytest_terminal_summary(terminalreporter):
    if not _results:
        return
    terminalreporter.section("acceptance criteria")
    for cid, title, passed, detail in sorted(_results, key=lambda r: (int(r[0].rstrip("ab")), r[0])):
        line = f"{'PASS' if passed else 'FAIL'}  criterion {cid:<3} {title}"
        if detail:
            line += f"  [{detail}]"
        terminalreporter.write_line(line)
