import pytest


def pytest_addoption(parser):
    group = parser.getgroup("vlevo acceptance")
    group.addoption("--acceptance", action="store_true",
                    help="run the long acceptance criteria (NK grids and GA arms, ~2 h on one core)")
    group.addoption("--acceptance-dir", default=None,
                    help="where acceptance grids are cached (default $VLEVO_ACCEPTANCE_DIR or ./acceptance-output)")
    group.addoption("--acceptance-workers", type=int, default=1, help="worker processes for acceptance grids")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--acceptance"):
        return
    skip = pytest.mark.skip(reason="long acceptance criterion; pass --acceptance to run")
    for item in items:
        if "acceptance" in item.keywords:
            item.add_marker(skip)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    try:
        from test_acceptance import RESULTS, CRITERIA
    except ImportError:
        return
    if not RESULTS:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for n in CRITERIA:
        if n in RESULTS:
            ok, detail = RESULTS[n]
            tr.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
        else:
            tr.write_line(f"criterion {n:2d}: NOT RUN (skipped or errored; long criteria need --acceptance)")
