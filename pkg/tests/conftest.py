import pytest

_criteria = []


def pytest_runtest_makereport(item, call):
    marker = item.get_closest_marker("criterion")
    if marker is None or call.when != "call":
        return
    number, title = marker.args
    if call.excinfo is None:
        outcome = "PASS"
    elif call.excinfo.errisinstance(pytest.skip.Exception):
        outcome = "SKIP"
    else:
        outcome = "FAIL"
    _criteria.append((number, title, item.name, outcome))


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for number, title, name, outcome in sorted(_criteria, key=lambda c: (c[0], c[2])):
        terminalreporter.write_line(f"AC{number:<2} {outcome:4}  {title} [{name}]")
