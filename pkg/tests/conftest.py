import numpy as np
import pytest

from stsl import backend


@pytest.fixture(params=backend.available())
def kernel_backend(request):
    previous = backend.name
    backend.use(request.param)
    yield request.param
    backend.use(previous)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


_criteria: dict[int, tuple[str, str, float]] = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None or report.when == "teardown" and report.passed:
        return
    number, title = marker.args
    if report.when == "call" or report.failed:
        verdict = "PASS" if report.passed else "SKIP" if report.skipped else "FAIL"
        _criteria[number] = (title, verdict, report.duration)


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_criteria):
        title, verdict, seconds = _criteria[number]
        terminalreporter.write_line(f"criterion {number}: {verdict}  {title}  ({seconds:.1f}s)")
