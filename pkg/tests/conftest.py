import numpy as np
import pytest
from hypothesis import settings

settings.register_profile("semgr", deadline=None, max_examples=40, derandomize=True)
settings.load_profile("semgr")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# criterion -> list of (check, passed, detail), filled by test_acceptance.py
ACCEPTANCE: dict = {}


def record_check(criterion: int, check: str, passed: bool, detail: str = "") -> bool:
    ACCEPTANCE.setdefault(criterion, []).append((check, bool(passed), detail))
    return bool(passed)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for crit in sorted(ACCEPTANCE):
        checks = ACCEPTANCE[crit]
        failed = [c for c in checks if not c[1]]
        verdict = "PASS" if not failed else "FAIL"
        note = f"{len(checks) - len(failed)}/{len(checks)} checks"
        if failed:
            note += "; failing: " + ", ".join(c[0] for c in failed)
        tr.write_line(f"criterion {crit}: {verdict} ({note})")
    tr.write_line("")
    for crit in sorted(ACCEPTANCE):
        for check, ok, detail in ACCEPTANCE[crit]:
            tr.write_line(f"  [{crit}] {'ok  ' if ok else 'FAIL'} {check}: {detail}")
