import math

import numpy as np
import pytest

from pednet.net import parse_street_network
from pednet.pedestrianfer import HypothesisConfig, build_hypothesis
from pednet.synthetic import grid_city


def winding_number(pt, ring) -> int:
    """Brute-force winding number by summing signed angles; independent of the ray test."""
    r = np.asarray(ring, dtype=float)
    if np.allclose(r[0], r[-1]):
        r = r[:-1]
    total = 0.0
    for i in range(len(r)):
        a = r[i] - pt
        b = r[(i + 1) % len(r)] - pt
        total += math.atan2(a[0] * b[1] - a[1] * b[0], a[0] * b[0] + a[1] * b[1])
    return int(round(total / (2 * math.pi)))


@pytest.fixture(scope="session")
def grid3():
    doc = grid_city(3, 3)
    streets = parse_street_network(doc)
    return doc, streets, build_hypothesis(streets, HypothesisConfig(regime="full"))


@pytest.fixture(scope="session")
def grid5():
    doc = grid_city(5, 5)
    streets = parse_street_network(doc)
    return doc, streets, build_hypothesis(streets, HypothesisConfig(regime="full"))


ACCEPTANCE_LINES: dict[int, str] = {}


def record_criterion(n: int, ok: bool, detail: str) -> None:
    line = f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES[n] = line
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[n])
