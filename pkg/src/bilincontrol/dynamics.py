"""Forward and costate integration, objective evaluation and a-priori bounds.

All open-loop integration is classic RK4 on the control grid, with the control
sampled by linear interpolation (the midpoint value is the average of the two
adjacent nodes). Because the system is linear in the state, each RK4 step is a
fixed matrix; those matrices are built for all steps at once and then applied
in sequence.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import ControlSignal, GridSpec, ProblemSpec, Trajectory, frobenius_norm


class IntegrationError(RuntimeError):
    """Non-finite or runaway state during integration."""


@dataclass(frozen=True)
class ObjectiveValue:
    terminal: float
    integral: float
    beta: float = 0.0

    @property
    def total(self) -> float:
        return self.terminal + self.beta * self.integral


@dataclass(frozen=True)
class ReachabilityBounds:
    gamma: float
    lower: float
    upper: float


def reachability_bounds(p: ProblemSpec) -> ReachabilityBounds:
    """Gronwall two-sided bound on ||x(t)|| valid for every admissible control."""
    gamma = frobenius_norm(p.A) + p.nu * frobenius_norm(p.B)
    r = float(np.linalg.norm(p.x0))
    return ReachabilityBounds(gamma, float(r * np.exp(-gamma * p.T)), float(r * np.exp(gamma * p.T)))


def rk4_step_matrices(M0, Mm, M1, h):
    """One-step RK4 propagators for x' = M(t) x, batched over leading axis.

    ``M0``, ``Mm``, ``M1`` hold M at the start, midpoint and end of each step.
    """
    n = M0.shape[-1]
    eye = np.eye(n)
    K1 = M0
    K2 = Mm @ (eye + 0.5 * h * K1)
    K3 = Mm @ (eye + 0.5 * h * K2)
    K4 = M1 @ (eye + h * K3)
    return eye + (h / 6.0) * (K1 + 2.0 * K2 + 2.0 * K3 + K4)


def _propagate(Phi, start, limit):
    out = np.empty((Phi.shape[0] + 1, start.shape[0]))
    out[0] = start
    x = start
    for k in range(Phi.shape[0]):
        x = Phi[k] @ x
        out[k + 1] = x
    if not np.all(np.isfinite(out)):
        raise IntegrationError("non-finite state encountered")
    if np.max(np.linalg.norm(out, axis=1)) > limit:
        raise IntegrationError("state norm exceeds 10x the a-priori reachability bound")
    return out


def _check_grid(p: ProblemSpec, grid: GridSpec):
    if abs(grid.T - p.T) > 1e-12 * p.T:
        raise ValueError(f"grid horizon {grid.T} differs from problem horizon {p.T}")


def integrate_forward(p: ProblemSpec, u: ControlSignal) -> Trajectory:
    """RK4 solution of x' = (A + uB)x, x(0) = x0, on the control grid."""
    _check_grid(p, u.grid)
    h = u.grid.step
    v = u.values
    um = u.midpoints()
    A, B = p.A, p.B
    Phi = rk4_step_matrices(A + v[:-1, None, None] * B, A + um[:, None, None] * B,
                            A + v[1:, None, None] * B, h)
    limit = 10.0 * reachability_bounds(p).upper
    return Trajectory(u.grid, _propagate(Phi, p.x0, limit))


def integrate_dual(p: ProblemSpec, u: ControlSignal, psiT) -> Trajectory:
    """Backward RK4 sweep of psi' = -(A^T + u B^T) psi from psi(T) = psiT.

    The result is stored forward in time: ``states[k]`` is psi(t_k).
    """
    _check_grid(p, u.grid)
    psiT = np.asarray(psiT, dtype=float)
    if psiT.shape != (p.n,):
        raise ValueError(f"psiT must have shape ({p.n},), got {psiT.shape}")
    if not np.all(np.isfinite(psiT)):
        raise IntegrationError("non-finite terminal costate")
    h = u.grid.step
    v = u.values[::-1]
    um = u.midpoints()[::-1]
    At, Bt = -p.A.T, -p.B.T
    Phi = rk4_step_matrices(At + v[:-1, None, None] * Bt, At + um[:, None, None] * Bt,
                            At + v[1:, None, None] * Bt, -h)
    b = reachability_bounds(p)
    limit = 10.0 * float(np.linalg.norm(psiT)) * np.exp(b.gamma * p.T) + 1e-300
    states = _propagate(Phi, psiT, limit)[::-1]
    return Trajectory(u.grid, states)


def half_step_states(p: ProblemSpec, u: ControlSignal, traj: Trajectory, backward=False):
    """States at interval midpoints t_k + h/2, from an RK4 half step.

    Forward trajectories step from node k; costates (``backward=True``) step
    back from node k+1 with the dual matrices.
    """
    h = u.grid.step
    v = u.values
    q1 = 0.75 * v[:-1] + 0.25 * v[1:]
    q2 = 0.5 * (v[:-1] + v[1:])
    q3 = 0.25 * v[:-1] + 0.75 * v[1:]
    if not backward:
        A, B = p.A, p.B
        Phi = rk4_step_matrices(A + v[:-1, None, None] * B, A + q1[:, None, None] * B,
                                A + q2[:, None, None] * B, 0.5 * h)
        return np.einsum("kij,kj->ki", Phi, traj.states[:-1])
    At, Bt = -p.A.T, -p.B.T
    Phi = rk4_step_matrices(At + v[1:, None, None] * Bt, At + q3[:, None, None] * Bt,
                            At + q2[:, None, None] * Bt, -0.5 * h)
    return np.einsum("kij,kj->ki", Phi, traj.states[1:])


def rk4_feedback_step(A, B, t, x, dt, control):
    """One RK4 step of x' = (A + u B)x with u = control(t, x) at each stage."""
    def f(tt, xx):
        return A @ xx + control(tt, xx) * (B @ xx)

    k1 = f(t, x)
    k2 = f(t + 0.5 * dt, x + 0.5 * dt * k1)
    k3 = f(t + 0.5 * dt, x + 0.5 * dt * k2)
    k4 = f(t + dt, x + dt * k3)
    return x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def objective(p: ProblemSpec, x: Trajectory, u: ControlSignal) -> ObjectiveValue:
    """Terminal quadratic form plus beta times the trapezoid integral of u^2."""
    if x.grid != u.grid:
        raise ValueError("trajectory and control live on different grids")
    xT = x.final
    terminal = float(xT @ p.L @ xT)
    integral = float(np.dot(u.grid.trapezoid_weights(), u.values ** 2))
    return ObjectiveValue(terminal, integral, p.beta)


def evaluate(p: ProblemSpec, u: ControlSignal) -> tuple[Trajectory, ObjectiveValue]:
    x = integrate_forward(p, u)
    return x, objective(p, x, u)


def invariant_drift(x: Trajectory) -> float:
    """Largest relative deviation of ||x(t)||^2 from ||x(0)||^2."""
    r0 = float(x.states[0] @ x.states[0])
    if r0 == 0.0:
        raise ValueError("zero initial state")
    sq = np.einsum("ki,ki->k", x.states, x.states)
    return float(np.max(np.abs(sq - r0)) / r0)


def write_trajectory_csv(x: Trajectory, path, header_prefix="x") -> None:
    """CSV with header t,x1,...,xn and 12 significant digits."""
    n = x.states.shape[1]
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t"] + [f"{header_prefix}{i + 1}" for i in range(n)])
        for t, row in zip(x.grid.times, x.states):
            w.writerow([f"{t:.12g}"] + [f"{v:.12g}" for v in row])
