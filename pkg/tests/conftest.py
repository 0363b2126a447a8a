import math

import numpy as np
import pytest

from twinpred.lanemap import LaneMap, LanePolyline
from twinpred.synth import ScenarioSpec, generate_lanemap

ACCEPTANCE_LINES = []


def record_criterion(number: int, passed: bool, detail: str) -> str:
    line = f"CRITERION {number:>2}: {'PASS' if passed else 'FAIL'} | {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return line


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def cross_polylines():
    """Two straight lanes crossing at the origin plus a quarter-arc turn."""
    ang = np.linspace(math.pi, math.pi / 2, 20)
    arc = np.column_stack([10 + 10 * np.cos(ang), 10 * np.sin(ang)])
    return [
        LanePolyline(0, np.array([[-50.0, 0.0], [50.0, 0.0]])),
        LanePolyline(1, np.array([[0.0, -50.0], [0.0, 50.0]])),
        LanePolyline(2, arc),
    ]


@pytest.fixture(scope="session")
def cross_map(cross_polylines):
    return LaneMap(cross_polylines)


@pytest.fixture(scope="session")
def intersection_map():
    return LaneMap(generate_lanemap(ScenarioSpec()))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
