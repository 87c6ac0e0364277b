"""Collects acceptance-criterion outcomes and prints one line per criterion."""
from __future__ import annotations

CRITERIA = {
    1: "merge-and-light scenario: constraint sets none / tmin / tmin_tmax",
    2: "reference profile against braking oracles",
    3: "solver optima against closed-form and brute-force oracles",
    4: "analytic derivatives against finite differences",
    5: "path smoothing on a circle and a noisy line",
    6: "infeasible start after a cut-in",
    7: "planning-cycle runtime and linear scaling",
    8: "following a constant-speed leader",
    9: "byte-identical outputs of repeated runs",
}

_outcomes: dict[int, list[bool]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): test belongs to acceptance criterion n")


def pytest_runtest_logreport(report):
    if report.when != "call" and not (report.when == "setup" and report.outcome != "passed"):
        return
    for n in dict(report.user_properties).get("criteria", ()):
        _outcomes.setdefault(n, []).append(report.outcome == "passed")


def pytest_collection_modifyitems(items):
    for item in items:
        nums = tuple(m.args[0] for m in item.iter_markers("criterion"))
        item.user_properties.append(("criteria", nums))


def pytest_terminal_summary(terminalreporter):
    if not _outcomes:
        return
    terminalreporter.section("acceptance criteria")
    for n, title in CRITERIA.items():
        runs = _outcomes.get(n)
        if runs is None:
            status = "NOT RUN"
        else:
            status = "PASS" if all(runs) else "FAIL"
        terminalreporter.write_line(f"criterion {n}: {status}  {title}")
