import numpy as np
import pytest

from rlguide.io import load_scene, resolve_scene


@pytest.fixture(scope="session")
def bundled():
    cache = {}

    def get(name):
        if name not in cache:
            cache[name] = load_scene(resolve_scene(name))
        return cache[name]

    return get


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# --- acceptance criterion report ----------------------------------------------

_CRITERIA: dict[int, dict] = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or (report.when != "call" and report.passed):
        return
    n, title = marker.args
    entry = _CRITERIA.setdefault(n, {"title": title, "ok": True, "notes": []})
    if report.skipped:
        if entry["ok"] is True:
            entry["ok"] = None
    elif not report.passed:
        entry["ok"] = False
    if report.when == "call":
        entry["notes"] += [f"{k}={v}" for k, v in item.user_properties]


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        e = _CRITERIA[n]
        status = {True: "PASS", False: "FAIL", None: "SKIP"}[e["ok"]]
        notes = "; ".join(e["notes"])
        terminalreporter.write_line(f"criterion {n:2d} {status}  {e['title']}" + (f"  [{notes}]" if notes else ""))
