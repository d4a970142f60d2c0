from __future__ import annotations

import time

import pytest

from fsvgmm.montecarlo import FitTarget, MonteCarloConfig, default_jobs, run_montecarlo

ACCEPTANCE_LINES: dict[int, str] = {}

PANEL_B_SEED = 20240611
PANEL_B_TARGETS = (FitTarget("iv"), FitTarget("rv"), FitTarget("rv", "exact-rv"))


def record_criterion(number: int, ok: bool, detail: str) -> None:
    line = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES[number] = line
    print(line)


@pytest.fixture(scope="session")
def panel_b_mc():
    """100 Panel B replications, T = 4000, fitted on IV, RV and ExactRv-corrected RV."""
    cfg = MonteCarloConfig(panel="B", reps=100, seed=PANEL_B_SEED, targets=PANEL_B_TARGETS, jobs=default_jobs())
    t0 = time.perf_counter()
    result = run_montecarlo(cfg)
    return result, time.perf_counter() - t0


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[k])
