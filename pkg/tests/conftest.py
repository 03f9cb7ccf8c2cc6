import time

import numpy as np
import pytest

from singgraph.synth import make_corpus, write_corpus

_SESSION_START = time.monotonic()
SUITE_BUDGET_S = 15 * 60

# criterion number -> (passed, title, detail)
ACCEPTANCE = {}


@pytest.fixture
def record_criterion():
    def record(num, title, passed, detail=""):
        ACCEPTANCE[num] = (bool(passed), title, detail)
    return record


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def small_corpus(tmp_path_factory):
    """12 clips of 8 s, train/val split, with proxy embedding files."""
    root = tmp_path_factory.mktemp("corpus")
    splits = ["train"] * 8 + ["val"] * 4
    return write_corpus(make_corpus(12, 8.0, seed=3, splits=splits), root)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    elapsed = time.monotonic() - _SESSION_START
    tr = terminalreporter
    tr.section("acceptance criteria")
    tr.write_line("[N/A ] 1 published EER reproduction: dataset unreleased; documented only")
    for num in sorted(ACCEPTANCE):
        ok, title, detail = ACCEPTANCE[num]
        tr.write_line(f"[{'PASS' if ok else 'FAIL'}] {num} {title}: {detail}")
    ok = elapsed < SUITE_BUDGET_S
    tr.write_line(f"[{'PASS' if ok else 'FAIL'}] 10 full suite wall-clock: {elapsed:.1f} s "
                  f"(limit {SUITE_BUDGET_S} s)")
