import pytest

_RESULTS = pytest.StashKey[dict]()


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion")
    config.stash[_RESULTS] = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or rep.skipped:
        return
    if rep.when == "call" or (rep.failed and rep.when == "setup"):
        detail = "; ".join(str(v) for k, v in item.user_properties if k == "detail")
        item.config.stash[_RESULTS][marker.args[0]] = (marker.args[1], rep.passed, detail)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    results = config.stash[_RESULTS]
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(results):
        title, passed, detail = results[number]
        terminalreporter.write_line(
            f"criterion {number} {'PASS' if passed else 'FAIL'}  {title}" + (f"  [{detail}]" if detail else "")
        )
