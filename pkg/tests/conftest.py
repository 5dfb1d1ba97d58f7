import os
import tempfile
from pathlib import Path

import numpy as np
import pytest

# keep simulated null caches out of the user's home during tests
os.environ.setdefault("EVTAUCTION_CACHE", tempfile.mkdtemp(prefix="evtauction-test-"))

DATA = Path(__file__).resolve().parents[1] / "src" / "evtauction" / "data"
_VERDICTS = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[_VERDICTS] = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_VERDICTS, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)


@pytest.fixture
def verdict(request):
    """Record one PASS/FAIL line for an acceptance criterion, then assert it."""

    def record(number, checks, detail):
        failed = [k for k, ok in checks.items() if not ok]
        status = "PASS" if not failed else "FAIL"
        line = f"criterion {number}: {status}  {detail}" + (f"  (failed: {', '.join(failed)})" if failed else "")
        request.config.stash[_VERDICTS].append(line)
        print("\n" + line)
        assert not failed, line

    return record


@pytest.fixture
def rng():
    return np.random.default_rng(20240225)


@pytest.fixture
def datasets():
    return DATA / "datasets"
