"""Shared fixtures for the Monte Carlo heavy tests, and the acceptance report."""

import re

import pytest

from curetrial.interim import DEFAULT_BOUNDARY_GRID, operating_characteristics
from curetrial.scenario_file import load_scenario

ACCEPTANCE_TRIALS = 10_000
ACCEPTANCE_SEED = 20240


@pytest.fixture(scope="session")
def mirros_bundle():
    return load_scenario("mirros")


@pytest.fixture(scope="session")
def mirros_oc(mirros_bundle):
    """Interim operating characteristics of the bundled preset at d = 275."""
    null, alt = mirros_bundle.interim_scenarios()
    return operating_characteristics(
        null, alt, DEFAULT_BOUNDARY_GRID, 275, ACCEPTANCE_TRIALS, ACCEPTANCE_SEED, mirros_bundle.rule
    )


_REPORT = {}


@pytest.fixture
def criterion(request):
    """Record one acceptance line: ``criterion(label, text)`` before asserting.

    Calling it again for the same label replaces the text.
    """

    def record(label, text):
        _REPORT[str(label)] = [text, request.node]

    return record


def pytest_runtest_makereport(item, call):
    if call.when != "call":
        return
    for entry in _REPORT.values():
        if entry[1] is item:
            entry.append(call.excinfo is None)


def pytest_terminal_summary(terminalreporter):
    if not _REPORT:
        return
    terminalreporter.section("acceptance criteria")
    for label in sorted(_REPORT, key=_natural):
        text, _, *status = _REPORT[label]
        verdict = "PASS" if status and status[0] else "FAIL"
        terminalreporter.write_line(f"[{verdict}] {label:>3}  {text}")


def _natural(label):
    num, rest = re.match(r"(\d+)(.*)", label).groups()
    return int(num), rest
