import numpy as np
import pytest

from vprhash.codes import MatchResult
from vprhash.dataset import TraversalPair


def build_pr_instance():
    """20 interior queries, margin 5, 40 test db frames, full rankings.

    Queries 30..39 rank their 11 true positives first (centre, then
    alternating -1/+1 offsets). Queries 40..49 put a wrong frame first,
    then 5 positives, then every negative, then the remaining 6 positives.
    """
    pair = TraversalPair(
        tuple(range(60)), tuple(range(60)), np.arange(60), 5,
        (0, 10), (0, 10), (20, 60), (30, 50),
    )
    db = list(range(20, 60))
    matches = []
    for q in range(30, 50):
        window = [q] + [q + s * o for o in range(1, 6) for s in (-1, 1)]
        negatives = [j for j in db if j not in window]
        if q < 40:
            order = window + negatives
        else:
            wrong = negatives[0]
            order = [wrong] + window[:5] + negatives[1:] + window[5:]
        assert sorted(order) == db
        matches.append(MatchResult(q, tuple((j, r) for r, j in enumerate(order))))
    return pair, matches


@pytest.fixture
def pr_instance():
    return build_pr_instance()


ACCEPTANCE_LINES = []


@pytest.fixture
def report_line():
    """Print a one-line verdict and keep it for the end-of-run summary."""

    def emit(number, ok, detail):
        line = f"acceptance {number}: {'PASS' if ok else 'FAIL'} - {detail}"
        print(line)
        ACCEPTANCE_LINES.append(line)
        return ok

    return emit


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
