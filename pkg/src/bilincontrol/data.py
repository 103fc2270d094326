"""Built-in problem data for the two reference examples."""

import numpy as np

from .core import ControlSignal, GridSpec, ProblemSpec

A_REF = np.array([
    [0, 0, 1, -2],
    [0, 0, -2, -1],
    [-1, 2, 0, 0],
    [2, 1, 0, 0],
], dtype=float)

B_REF = np.array([
    [0, 0, -1, 1],
    [0, 0, 1, 2],
    [1, -1, 0, 0],
    [-1, -2, 0, 0],
], dtype=float)

L_REF = np.diag([-1.0, -2.0, -3.0, -1.0])
X0_REF = np.array([-1.0, 1.0, -1.0, 1.0])

DEFAULT_STEP = 0.0005


def example1(beta=0.0) -> ProblemSpec:
    """n=4, T=1/2, nu=3."""
    return ProblemSpec(A_REF, B_REF, L_REF, X0_REF, T=0.5, nu=3.0, beta=beta)


def example2(beta=0.0) -> ProblemSpec:
    """Same data as example 1 with T=5, nu=1."""
    return ProblemSpec(A_REF, B_REF, L_REF, X0_REF, T=5.0, nu=1.0, beta=beta)


def example1_initial_control(grid: GridSpec) -> ControlSignal:
    return ControlSignal.constant(grid, 0.3, nu=3.0)


def example2_initial_control(grid: GridSpec) -> ControlSignal:
    return ControlSignal.piecewise(grid, [(0.0, 1.0, 1.0), (1.0, 5.0, 0.0)], nu=1.0)


EXAMPLES = {
    1: (example1, example1_initial_control),
    2: (example2, example2_initial_control),
}


def example(example_id: int, h: float = DEFAULT_STEP):
    """Return (problem, grid, initial control) for a reference example."""
    make_problem, make_control = EXAMPLES[example_id]
    p = make_problem()
    grid = GridSpec.from_step(p.T, h)
    return p, grid, make_control(grid)
