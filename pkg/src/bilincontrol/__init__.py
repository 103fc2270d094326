"""Optimal control of bilinear systems x' = (A + uB)x with a quadratic
terminal criterion and a bounded scalar control."""

from .core import (
    BlockHamiltonianStructure,
    ControlSignal,
    GridSpec,
    ProblemError,
    ProblemSpec,
    Trajectory,
    block_to_complex,
    commutator,
    detect_block_structure,
    frobenius_norm,
    load_problem,
    save_problem,
    validate_problem,
)
from .dynamics import (
    IntegrationError,
    ObjectiveValue,
    ReachabilityBounds,
    evaluate,
    integrate_dual,
    integrate_forward,
    invariant_drift,
    objective,
    reachability_bounds,
)
from .pmp import (
    commutator_chain,
    extremal_control,
    pmp_residual,
    singular_control_value,
    singular_free_certificate,
    switching_value,
    terminal_switching,
    transversality_costate,
)
from .improve import (
    IterationRecord,
    SolverConfig,
    SolverReport,
    ensure_concave_terminal,
    gradient_iteration,
    improvement_certificate,
    krotov_iteration,
    krotov_iteration_bang_only,
    solve,
)

__version__ = "0.1.0"
