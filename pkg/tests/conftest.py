"""Shared pytest hooks: acceptance criteria report one pass/fail line each."""

ACCEPTANCE = {}


def pytest_runtest_logreport(report):
    if "test_acceptance.py::test_criterion_" not in report.nodeid:
        return
    name = report.nodeid.split("::")[-1]
    outcome, total = ACCEPTANCE.get(name, ("passed", 0.0))
    # setup time includes the shared flow runs a criterion is the first to request
    total += report.duration
    if report.outcome == "failed" or (report.when == "call" and report.outcome != "passed"):
        outcome = report.outcome
    ACCEPTANCE[name] = (outcome, total)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(ACCEPTANCE, key=lambda s: int(s.split("_")[2])):
        outcome, duration = ACCEPTANCE[name]
        verdict = "PASS" if outcome == "passed" else "FAIL"
        terminalreporter.write_line(f"{verdict}  {name}  ({duration:.1f} s)")
