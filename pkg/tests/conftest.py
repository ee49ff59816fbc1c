import numpy as np
import pytest

from netlump.model import parse_model

SIR = """\
states: S, I, R
S + I -> I + I : 6.0
I -> R : 4.0
R -> S : 1.0
"""

RUMOR = """\
states: I, S, R
I + S -> S + S : 6.0
S + R -> R + R : 0.7
S + S -> R + S : 0.7
"""

SIIIR = """\
states: S, I, II, III, R
S + I -> I + I : 5
S + II -> I + II : 1.5
S + III -> I + III : 1
I -> II : 2
II -> III : 2
III -> R : 2
R -> S : 2
"""

SIS = """\
states: S, I
S + I -> I + I : 1.5
I -> S : 1.0
"""

MIXED = """\
states: A, B, C
A + B -> B + B : 1.3
B + C -> C + C : 0.4
A + A -> C + A : 0.2
B -> A : 0.7
C -> A : 0.5
A -> C : 0.1
"""


@pytest.fixture(scope="session")
def sir():
    return parse_model(SIR)


@pytest.fixture(scope="session")
def rumor():
    return parse_model(RUMOR)


@pytest.fixture(scope="session")
def siiir():
    return parse_model(SIIIR)


@pytest.fixture(scope="session")
def sis():
    return parse_model(SIS)


@pytest.fixture(scope="session")
def mixed():
    return parse_model(MIXED)


def random_simplex(rng, shape, n):
    """Random points on the n-simplex, one per leading index; last axis sums to 1."""
    return rng.dirichlet(np.ones(n), size=shape)


def random_pa_state(rng, n_states, n_classes):
    x = random_simplex(rng, n_classes, n_states).T  # (S, C)
    p = random_simplex(rng, (n_states, n_classes), n_states)  # (S, C, S)
    return x, p


# acceptance lines are collected here and echoed after the run
ACCEPTANCE_LINES: list[str] = []


@pytest.fixture(scope="session")
def acceptance_log():
    # handed out as a fixture so the hook below sees the same list the tests append to
    return ACCEPTANCE_LINES


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
