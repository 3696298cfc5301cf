import functools

from daitn.report import build_report, dumps
from daitn.runner import Run
from daitn.scenario import bundled, load


@functools.lru_cache(maxsize=None)
def scenario_run(name, mode=None, seed=None, overrides=()):
    """(Run, report text) for a bundled scenario; cached so several tests can share one run."""
    run = Run(load(bundled(name), list(overrides)), mode=mode, seed=seed).run()
    return run, dumps(build_report(run))


# acceptance summary: one line per criterion, printed after the run

_criteria = {}
notes = {}  # criterion number -> measured values worth printing


def pytest_runtest_logreport(report):
    marker = "test_acceptance.py::test_criterion_"
    if marker not in report.nodeid:
        return
    name = report.nodeid.split(marker, 1)[1]
    number = int(name.split("_", 1)[0])
    if report.when == "call" or report.failed or report.skipped:
        prev = _criteria.get(number)
        if prev is None or prev[0] == "PASS":
            _criteria[number] = ("PASS" if report.passed else "FAIL", name.split("_", 1)[1].replace("_", " "))


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_criteria):
        status, title = _criteria[number]
        line = f"criterion {number:2d}: {status}  {title}"
        if number in notes:
            line += f"  [{notes[number]}]"
        terminalreporter.write_line(line)
