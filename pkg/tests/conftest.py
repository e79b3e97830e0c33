import numpy as np
import pytest

from nldp.problem import Ball, BoundaryData, DriftField, EllipticField, ProblemSpec
from nldp.fields import Constant


@pytest.fixture
def brownian_disk():
    """A = I, b = 0 in the unit disk with phi = 0."""
    return ProblemSpec(EllipticField.identity(2), DriftField.zero(2), Ball((0.0, 0.0), 1.0),
                       BoundaryData(Constant(0.0), 0.0))


def _z(est, exact):
    if est.stderr > 0:
        return abs(est.mean - exact) / est.stderr
    return 0.0 if est.mean == exact else np.inf


@pytest.fixture
def zscore():
    """|mean - exact| / stderr of an Estimate."""
    return _z


ACCEPTANCE_LINES: dict[int, str] = {}


@pytest.fixture
def criterion():
    """Record the one-line verdict for an acceptance criterion; also printed immediately."""

    def record(number: int, passed: bool, detail: str) -> bool:
        line = f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}"
        ACCEPTANCE_LINES[number] = line
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[k])
