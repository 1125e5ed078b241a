import os
import sys

import numpy as np
import pytest
from hypothesis import settings

sys.path.insert(0, os.path.dirname(__file__))

from mraslab.forward import homogenize, make_problem, solve_forward  # noqa: E402
from mraslab.grid import make_uniform_grid  # noqa: E402

settings.register_profile("default", max_examples=40, deadline=None)
settings.load_profile("default")

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)


def c_problem(n=99, q_star=lambda x: 1 + 0.5 * np.sin(np.pi * x), nonlinearity="c_cubic"):
    grid = make_uniform_grid(0, 1, n)
    return make_problem("c", grid, nonlinearity, q_star=q_star, u0=1.0, g=10.0,
                        boundary=(1.0, 1.0), c_lower=1.0)


def a_problem(n=99, q_star=lambda x: 1 + 0.5 * np.sin(np.pi * x)):
    grid = make_uniform_grid(0, 1, n)
    return make_problem("a", grid, "a_cubic", q_star=q_star, u0=-1.0, g=-10.0,
                        boundary=(-1.0, -1.0), c_lower=1.0)


@pytest.fixture(scope="session")
def c_spec():
    return c_problem()


@pytest.fixture(scope="session")
def a_spec():
    return a_problem()


@pytest.fixture(scope="session")
def c_traj(c_spec):
    return solve_forward(c_spec, 2.0, 1e-3)


@pytest.fixture(scope="session")
def a_traj(a_spec):
    return solve_forward(a_spec, 1.0, 1e-3)


@pytest.fixture(scope="session")
def c_hom(c_spec):
    return homogenize(c_spec)


@pytest.fixture(scope="session")
def a_hom(a_spec):
    return homogenize(a_spec)
