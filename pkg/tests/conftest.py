"""Collects acceptance outcomes and prints one line per criterion at the end of the run."""

import pytest

_OUTCOMES: dict[int, tuple[str, str, str]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion checked by a test")


@pytest.hookimpl(wrapper=True)
def pytest_runtest_makereport(item, call):
    rep = yield
    marker = item.get_closest_marker("criterion")
    if marker is not None and (rep.when == "call" or rep.outcome != "passed"):
        number, title = marker.args
        detail = getattr(item, "criterion_detail", "")
        status = "PASS" if rep.passed else "FAIL"
        # a failure in setup or teardown overrides a passing call
        if number not in _OUTCOMES or status == "FAIL":
            _OUTCOMES[number] = (status, title, detail)
    return rep


def pytest_terminal_summary(terminalreporter):
    if not _OUTCOMES:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_OUTCOMES):
        status, title, detail = _OUTCOMES[number]
        line = f"criterion {number:>2} {status}  {title}"
        terminalreporter.write_line(line + (f"  [{detail}]" if detail else ""))


@pytest.fixture
def record(request):
    """Attach a short measurement to the acceptance line of the running test."""

    def _record(text: str):
        request.node.criterion_detail = text

    return _record
