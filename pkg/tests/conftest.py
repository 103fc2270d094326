import numpy as np
import pytest

from bilincontrol import data
from bilincontrol.core import ControlSignal, GridSpec, ProblemSpec


def commuting_block_problem(x0=(1.0, 0.0, 0.0, 0.0), T=1.0, nu=1.0, beta=0.0):
    """n=4 Hamiltonian pair with PB = I, so A and B commute and B^2 = -I."""
    Z = np.zeros((2, 2))
    PA, PB = np.diag([1.0, 2.0]), np.eye(2)
    A = np.block([[Z, PA], [-PA, Z]])
    B = np.block([[Z, PB], [-PB, Z]])
    return ProblemSpec(A, B, data.L_REF, x0, T=T, nu=nu, beta=beta)


def random_piecewise(rng, grid, nu, pieces=8):
    edges = np.sort(rng.uniform(0.0, grid.T, pieces - 1))
    knots = np.concatenate([[0.0], edges, [grid.T]])
    vals = rng.uniform(-nu, nu, pieces)
    return ControlSignal.piecewise(grid, list(zip(knots[:-1], knots[1:], vals)), nu=nu)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def ex1_coarse():
    p = data.example1()
    g = GridSpec.from_step(p.T, 0.005)
    return p, g, data.example1_initial_control(g)


@pytest.fixture
def ex2_coarse():
    p = data.example2()
    g = GridSpec.from_step(p.T, 0.01)
    return p, g, data.example2_initial_control(g)


def pytest_terminal_summary(terminalreporter):
    import test_acceptance

    if not test_acceptance.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n, (ok, detail) in sorted(test_acceptance.RESULTS.items()):
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
