import numpy as np
import pytest

_criteria: dict = {}


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion checked by the test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    entry = _criteria.setdefault(mark.args, {"failed": False, "passed": 0, "skipped": False, "seconds": 0.0})
    entry["seconds"] += rep.duration
    if rep.failed:
        entry["failed"] = True
    elif rep.skipped:
        entry["skipped"] = True
    elif rep.when == "call":
        entry["passed"] += 1


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for (number, title), e in sorted(_criteria.items()):
        verdict = "FAIL" if e["failed"] else "SKIP" if e["skipped"] or not e["passed"] else "PASS"
        terminalreporter.write_line(f"ACCEPTANCE {number:2d} {verdict}  {title} ({e['seconds']:.1f} s)")
