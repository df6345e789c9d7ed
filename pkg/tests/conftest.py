import numpy as np
import pytest

from crsurv.cohort import CohortMeta, SubjectRecord


def make_records(rows, k=0):
    """rows: iterable of (terminal_time, event[, covariates])."""
    out = []
    for i, row in enumerate(rows):
        cov = row[2] if len(row) > 2 else np.zeros(k)
        out.append(SubjectRecord(str(i + 1), row[0], row[1], np.asarray(cov, dtype=float)))
    return out


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def meta2():
    return CohortMeta.plain(2, 2)


# one line per acceptance criterion, collected by tests/test_acceptance.py
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
