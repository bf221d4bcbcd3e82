import pytest

# criterion number -> list of (test name, outcome, detail)
_CRITERIA: dict[int, list[tuple[str, str, str]]] = {}


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False,
                     help="also run the full-size reproduction tests marked slow")


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion the test belongs to")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip = pytest.mark.skip(reason="slow reproduction run; use --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip)


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    if rep.when == "call" or (rep.when == "setup" and not rep.passed):
        detail = "; ".join(str(v) for k, v in item.user_properties if k == "detail")
        if rep.failed and not detail:
            detail = rep.longreprtext.strip().splitlines()[-1] if rep.longreprtext else "error"
        _CRITERIA.setdefault(marker.args[0], []).append((item.name, rep.outcome, detail))


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        runs = [r for r in _CRITERIA[n] if r[1] != "skipped"]
        if not runs:
            terminalreporter.write_line(f"criterion {n}: SKIPPED")
            continue
        ok = all(r[1] == "passed" for r in runs)
        detail = " | ".join(r[2] for r in runs if r[2])
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
