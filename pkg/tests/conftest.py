"""Collects one verdict line per acceptance criterion and prints them at the end of the run."""

import pytest

VERDICTS = pytest.StashKey[dict]()
DETAIL = pytest.StashKey[str]()


def pytest_configure(config):
    config.stash[VERDICTS] = {}
    config.addinivalue_line("markers", "criterion(n): acceptance criterion number checked by this test")


@pytest.fixture
def record(request):
    """Attach a one-line measurement summary to the current criterion test."""
    def put(text: str) -> None:
        request.node.stash[DETAIL] = text
    return put


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or rep.when not in ("setup", "call"):
        return
    if rep.when == "setup" and not rep.failed:
        return
    detail = item.stash.get(DETAIL, "")
    if rep.failed and not detail:
        detail = f"error in {rep.when}"
    item.config.stash[VERDICTS][marker.args[0]] = (rep.passed, detail)


def pytest_terminal_summary(terminalreporter, config):
    verdicts = config.stash.get(VERDICTS, {})
    if not verdicts:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(verdicts):
        ok, detail = verdicts[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
