"""Shared fixtures and the acceptance-criteria report.

The flagship-scale analytic runs are expensive (a couple of minutes for the
three population sizes together), so they are computed once per session and
shared by every acceptance check that needs them.  Each acceptance test
records one line here; a summary section at the end of the run prints one
PASS/FAIL line per criterion with the measured numbers.
"""

from __future__ import annotations

import time

import pytest

from ctbpqueue.distribution import mix_to_queue_length
from ctbpqueue.engine import run_horizon
from ctbpqueue.poisson import build_truncation_plan
from ctbpqueue.presets import REFERENCE_T_GRID, reference_spec

_CRITERIA: dict[int, tuple[str, bool, str]] = {}


def _record(num: int, label: str, ok: bool, detail: str) -> None:
    _CRITERIA[num] = (label, bool(ok), detail)


@pytest.fixture
def criteria():
    """Recorder for acceptance results: criteria(num, label, ok, detail)."""
    return _record


def _solve_reference(K: int, grid):
    spec = reference_spec(K=K)
    plan = build_truncation_plan(spec)
    states = run_horizon(spec, plan, grid)
    return [(t, mix_to_queue_length(s, t, spec)) for t, s in states]


@pytest.fixture(scope="session")
def reference_runs():
    """Full-scale analytic runs for K in {900, 1000, 1100} on the 60-point grid."""
    return {K: _solve_reference(K, REFERENCE_T_GRID) for K in (900, 1000, 1100)}


@pytest.fixture(scope="session")
def reference_run_small():
    """The K=100 leg of the certified-defect criterion, with its wall time."""
    t0 = time.perf_counter()
    dists = _solve_reference(100, REFERENCE_T_GRID)
    return dists, time.perf_counter() - t0


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(_CRITERIA):
        label, ok, detail = _CRITERIA[num]
        status = "PASS" if ok else "FAIL"
        terminalreporter.write_line(f"criterion {num:2d} [{status}] {label}: {detail}")
