import os
import sys

import pytest

sys.path.insert(0, os.path.dirname(__file__))

# criterion number -> {"title": str, "outcomes": [bool], "details": [str]}
_CRITERIA = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion covered by a test")


def _entry(item):
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return None
    number, title = mark.args
    return _CRITERIA.setdefault(number, {"title": title, "outcomes": [], "details": []})


@pytest.fixture
def detail(request):
    """Append a one-line measurement to the criterion's report line."""
    entry = _entry(request.node)

    def add(text):
        if entry is not None:
            entry["details"].append(text)
    return add


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    entry = _entry(item)
    if entry is None:
        return
    if rep.when == "call" or (rep.when == "setup" and not rep.passed):
        entry["outcomes"].append(rep.passed)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        entry = _CRITERIA[number]
        ok = bool(entry["outcomes"]) and all(entry["outcomes"])
        status = "PASS" if ok else "FAIL"
        line = f"criterion {number:>2}  {status}  {entry['title']}"
        if entry["details"]:
            line += "  [" + "; ".join(entry["details"]) + "]"
        tr.write_line(line)
