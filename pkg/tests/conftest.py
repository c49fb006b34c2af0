import numpy as np
import pytest

from elastokernel.assembly import assemble
from elastokernel.domain import triangulate, unit_square
from elastokernel.elasticity import make_lame_tensor

SQ2 = np.sqrt(2.0)


def square_op(labels="DNNN", n=8, mu=1.0, lam=1.0):
    mesh = triangulate(unit_square(tuple(labels)), SQ2 / n)
    return assemble(mesh, make_lame_tensor(mu, lam))


@pytest.fixture(scope="session")
def lame():
    return make_lame_tensor(1.0, 1.0)


@pytest.fixture(scope="session")
def mixed8():
    return square_op("DNNN", 8)


@pytest.fixture(scope="session")
def neumann8():
    return square_op("NNNN", 8)


@pytest.fixture(scope="session")
def dirichlet8():
    return square_op("DDDD", 8)


@pytest.fixture(scope="session")
def mixed16():
    return square_op("DNNN", 16)


# acceptance criteria report one line each; echoed in the terminal summary
ACCEPTANCE = {}


def record(n: int, title: str, passed: bool, detail: str) -> bool:
    line = f"criterion {n:2d} {'PASS' if passed else 'FAIL'}  {title}: {detail}"
    ACCEPTANCE[n] = line
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[n])
