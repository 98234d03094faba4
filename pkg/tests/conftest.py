import re

CRITERIA = {
    1: "envelope oracle equivalence",
    2: "Lipschitz weights match the closed-form column",
    3: "covering constants and the circle net",
    4: "restricted isometry constant against an independent eigensolve",
    5: "Lipschitz inequality on 1000+ dictionary pairs",
    6: "Hoeffding concentration at a fixed dictionary",
    7: "sub-Gaussian norm tail",
    8: "worked-example beta table",
    9: "uniform deviation envelope and exponent",
    10: "generalization gap of the learned dictionary",
    11: "byte-identical CLI reports",
}

_outcomes: dict[int, str] = {}


def pytest_runtest_logreport(report):
    m = re.search(r"test_acceptance\.py::test_criterion_(\d+)", report.nodeid)
    if not m:
        return
    k = int(m.group(1))
    if report.when == "call" or report.outcome != "passed":
        prev = _outcomes.get(k, "PASS")
        _outcomes[k] = "FAIL" if report.outcome != "passed" or prev == "FAIL" else "PASS"


def pytest_terminal_summary(terminalreporter):
    if not _outcomes:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(CRITERIA):
        status = _outcomes.get(k, "NOT RUN")
        terminalreporter.write_line(f"criterion {k:2d}: {status:7s} {CRITERIA[k]}")
