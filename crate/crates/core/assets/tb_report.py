"""pytest plugin writing one `name PASS|FAIL` line per test to $TB_REPORT_FILE."""

import os

_results = {}


def _name(nodeid):
    parts = nodeid.split("::", 1)
    return parts[1] if len(parts) == 2 else nodeid


def pytest_runtest_logreport(report):
    name = _name(report.nodeid)
    if report.failed:
        _results[name] = False
    elif report.when == "call":
        _results.setdefault(name, True)
    elif report.skipped and report.when == "setup":
        _results.setdefault(name, False)


def pytest_sessionfinish(session, exitstatus):
    path = os.environ.get("TB_REPORT_FILE")
    if not path:
        return
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for name, passed in _results.items():
            fh.write("%s %s\n" % (name, "PASS" if passed else "FAIL"))
