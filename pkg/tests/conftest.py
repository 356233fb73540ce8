"""Shared fixtures: the canonical 100-seed certification suite (built once per
session; several acceptance criteria and the bounds tests read from it) and
the end-of-run acceptance summary printer."""

import time
from dataclasses import dataclass

import pytest

from od3sim.bounds import BoundReport
from od3sim.cli import SuiteInstance, certify_instance, suite_instance
from od3sim.od3 import OnlineState

SUITE_SEEDS = 100

# criterion id -> (passed, one-line detail); filled by tests/test_acceptance.py
ACCEPTANCE_RESULTS: dict[str, tuple[bool, str]] = {}


def record_criterion(cid: str, passed: bool, detail: str) -> None:
    ACCEPTANCE_RESULTS[cid] = (bool(passed), detail)


@dataclass
class SuiteCase:
    inst: SuiteInstance
    online: list[OnlineState]
    report: BoundReport


@dataclass
class SuiteRun:
    cases: list[SuiteCase]
    build_seconds: float

    def rows(self, bound_id: str):
        """(seed, row) pairs for one bound id across the whole suite."""
        for case in self.cases:
            for row in case.report.rows:
                if row.bound_id == bound_id:
                    yield case.inst.seed, row


@pytest.fixture(scope="session")
def suite_run() -> SuiteRun:
    """Simulate + certify all 100 canonical suite seeds (one-time, ~6 s)."""
    start = time.perf_counter()
    cases = []
    for seed in range(SUITE_SEEDS):
        inst = suite_instance(seed)
        online, report = certify_instance(inst)
        cases.append(SuiteCase(inst=inst, online=online, report=report))
    return SuiteRun(cases=cases, build_seconds=time.perf_counter() - start)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for cid in sorted(ACCEPTANCE_RESULTS, key=lambda k: int(k[1:])):
        passed, detail = ACCEPTANCE_RESULTS[cid]
        terminalreporter.write_line(f"[{cid}] {'PASS' if passed else 'FAIL'} - {detail}")
