from fractions import Fraction

import numpy as np
import pytest

from condrep.instances import pattern_joint, product_joint


@pytest.fixture
def pattern():
    return pattern_joint()


@pytest.fixture
def product():
    return product_joint()


@pytest.fixture
def sym2():
    from condrep.measures import DiscreteJoint

    P = [[Fraction(3, 8), Fraction(1, 8)], [Fraction(1, 8), Fraction(3, 8)]]
    return DiscreteJoint([0, 1], [0, 1], P)


@pytest.fixture
def rng():
    return np.random.default_rng(20241019)


_ACCEPTANCE = []


@pytest.fixture
def acceptance():
    """Record one pass/fail line per acceptance criterion."""

    def record(n: int, ok: bool, detail: str) -> bool:
        line = f"criterion {n}: {'PASS' if ok else 'FAIL'} ({detail})"
        _ACCEPTANCE.append(line)
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
