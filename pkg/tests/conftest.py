from fractions import Fraction

import pytest

from ostracism.model import MarketParams, PowerCost

# Hand-recursion values at unit rates and r = 1, kept as exact rationals.
HAND_VALUES = {
    (2, 1): {(2, 1): Fraction(0), (1, 1): Fraction(1, 3), (0, 1): Fraction(8, 9)},
    (2, 2): {(2, 1): Fraction(0), (2, 2): Fraction(0), (1, 2): Fraction(1, 4), (1, 1): Fraction(5, 16),
             (0, 1): Fraction(7, 8)},
}

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def quad_cost():
    return PowerCost(0.5, 2.0)


@pytest.fixture
def market21():
    return MarketParams(B=2, S=1)


@pytest.fixture
def market22():
    return MarketParams(B=2, S=2)


@pytest.fixture
def acceptance_log():
    def log(criterion: str, passed: bool, detail: str = "") -> None:
        ACCEPTANCE_LINES.append(f"[{'PASS' if passed else 'FAIL'}] {criterion}: {detail}")
    return log


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
