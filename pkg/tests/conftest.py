import time
from pathlib import Path

import pytest

from lowrank.io import read_pgm

CORPUS_DIR = Path(__file__).parent / "data" / "corpus"
ACCEPTANCE_LOG = pytest.StashKey[dict]()
SESSION_START = pytest.StashKey[float]()


@pytest.fixture(scope="session")
def corpus():
    return {p.stem: read_pgm(p) for p in sorted(CORPUS_DIR.glob("*.pgm"))}


@pytest.fixture(scope="session")
def acceptance_log(request):
    """Criterion number -> (passed, detail); printed in the terminal summary."""
    return request.config.stash.setdefault(ACCEPTANCE_LOG, {})


def pytest_sessionstart(session):
    session.config.stash[SESSION_START] = time.perf_counter()


def pytest_terminal_summary(terminalreporter, config):
    log = config.stash.get(ACCEPTANCE_LOG, None)
    if not log:
        return
    elapsed = time.perf_counter() - config.stash[SESSION_START]
    terminalreporter.section("acceptance criteria")
    for number in sorted(log):
        passed, detail = log[number]
        status = passed if isinstance(passed, str) else ("PASS" if passed else "FAIL")
        terminalreporter.write_line(f"criterion {number}: {status}  {detail}")
    if 8 in log:
        verdict = "PASS" if elapsed < 300 else "FAIL"
        terminalreporter.write_line(f"criterion 8 (whole suite < 300 s): {verdict}  this session took {elapsed:.0f} s")
