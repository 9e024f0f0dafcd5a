import pytest

_criteria = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, summary): acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or not (rep.when == "call" or rep.failed):
        return
    number, summary = mark.args
    _, ok, details = _criteria.get(number, (summary, True, []))
    details = details + [str(v) for k, v in item.user_properties if k == "detail"]
    _criteria[number] = (summary, ok and rep.passed, details)


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_criteria):
        summary, ok, details = _criteria[number]
        extra = f" ({'; '.join(dict.fromkeys(details))})" if details else ""
        terminalreporter.write_line(f"criterion {number}: {'PASS' if ok else 'FAIL'}  "
                                    f"{summary}{extra}")
