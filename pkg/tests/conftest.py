"""Shared fixtures plus a terminal summary that prints one PASS/FAIL line
per acceptance criterion."""

from __future__ import annotations

import pytest

from imago.dataset import Dataset, Provenance
from imago.trace import Dimensions, Trace

_acceptance_results: list[tuple[str, bool]] = []


def make_trace(id: str, xi: float, events) -> Trace:
    return Trace.from_event_pairs(id, xi, events)


def make_dataset(dims: Dimensions, traces) -> Dataset:
    return Dataset(dims, tuple(traces), Provenance.memory("test fixture"))


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    if report.when != "call":
        return
    if item.module.__name__.endswith("test_acceptance"):
        label = item.get_closest_marker("criterion")
        if label is not None:
            _acceptance_results.append((label.args[0], report.passed))


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(name): acceptance criterion label")


def pytest_terminal_summary(terminalreporter):
    if not _acceptance_results:
        return
    terminalreporter.write_sep("-", "acceptance criteria")
    for name, passed in _acceptance_results:
        status = "PASS" if passed else "FAIL"
        terminalreporter.write_line(f"[{status}] {name}")
