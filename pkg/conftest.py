import pytest

_criteria: list[tuple[str, str]] = []


def pytest_configure(config):
    config.addinivalue_line(
        "markers", "criterion(name): acceptance criterion this test decides")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker and report.when == "call":
        status = "PASS" if report.passed else (
            "SKIP" if report.skipped else "FAIL")
        _criteria.append((marker.args[0], status))


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if _criteria:
        terminalreporter.write_sep("-", "acceptance criteria")
        for name, status in _criteria:
            terminalreporter.write_line(f"{name}: {status}")
