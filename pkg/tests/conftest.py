"""Shared test plumbing: per-criterion reporting for the acceptance suite."""

import pytest

ACCEPTANCE_PREFIX = "test_acceptance"
_results = []
_notes = {}


def record_note(key, value):
    """Attach a measurement to the acceptance summary (e.g. timing ratios)."""
    _notes[key] = value


@pytest.hookimpl
def pytest_runtest_logreport(report):
    if report.when != "call":
        return
    if ACCEPTANCE_PREFIX not in report.nodeid:
        return
    name = report.nodeid.split("::")[-1]
    _results.append((name, report.outcome))


@pytest.hookimpl
def pytest_terminal_summary(terminalreporter):
    if not _results:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for name, outcome in _results:
        label = name.removeprefix("test_").replace("_", " ")
        flag = {"passed": "PASS", "failed": "FAIL", "skipped": "SKIP"}.get(outcome, outcome.upper())
        terminalreporter.write_line(f"[{flag}] {label}")
    for key, value in _notes.items():
        terminalreporter.write_line(f"  note: {key} = {value}")
