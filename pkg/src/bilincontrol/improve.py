"""Iterative control improvement: Krotov's global method, a projected adjoint
gradient method, and the outer solve loop.

One Krotov iteration takes the current process (x_s, u_s), sweeps the costate
psi_s backward along u_s from psi_s(T) = -2 L x_s(T), and then integrates the
state forward under the feedback law that maximises u * K(psi_s(t), x) (minus
beta * u^2). With beta = 0 the feedback is discontinuous on K = 0 and the
forward sweep is split into stages of constant bang control, switching where K
changes sign, plus singular stages that hold K at zero.
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np
from scipy.optimize import brentq

from .core import ControlSignal, GridSpec, ProblemSpec, Trajectory, detect_block_structure, frobenius_norm
from .dynamics import (
    ObjectiveValue,
    evaluate,
    half_step_states,
    integrate_dual,
    integrate_forward,
    objective,
    rk4_feedback_step,
)
from .pmp import PmpResidual, pmp_residual, transversality_costate

METHODS = ("global", "global-regularized", "gradient")
SINGULAR_MODES = ("staged", "bang-only-with-collapse")

BANG_PLUS = "bang+"
BANG_MINUS = "bang-"
SINGULAR = "singular"
INTERIOR = "interior"

MONOTONE_SLACK = 1e-10
MAX_SUBSTAGES = 20


class GlobalMethodInapplicable(ValueError):
    """Terminal form cannot be made concave (L indefinite, no norm invariant)."""


@dataclass(frozen=True)
class Segment:
    t_start: float
    t_end: float
    kind: str


@dataclass(frozen=True)
class IterationRecord:
    index: int
    objective: ObjectiveValue
    pmp_residual: PmpResidual
    segments: tuple
    wall_time: float
    flags: tuple = ()

    @property
    def stalled(self) -> bool:
        return "stalled" in self.flags


@dataclass(frozen=True)
class SolverConfig:
    method: str = "global"
    max_iters: int = 100
    grid: Optional[GridSpec] = None
    alpha_reg: float = 0.05
    stop_tol: float = 1e-9
    pmp_tol: float = 1e-6
    singular_mode: str = "staged"
    chatter_changes: int = 5
    chatter_span: int = 50

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}; expected one of {METHODS}")
        if self.singular_mode not in SINGULAR_MODES:
            raise ValueError(f"unknown singular_mode {self.singular_mode!r}")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if not (self.stop_tol > 0 and self.pmp_tol > 0):
            raise ValueError("tolerances must be positive")
        if self.alpha_reg < 0:
            raise ValueError("alpha_reg must be nonnegative")


@dataclass(frozen=True)
class SolverReport:
    config: SolverConfig
    history: list
    final_control: ControlSignal
    final_trajectory: Trajectory
    termination: str
    shift: float = 0.0

    @property
    def objectives(self) -> np.ndarray:
        return np.array([r.objective.total for r in self.history])


# ---------------------------------------------------------------------------
# Terminal-form concavity
# ---------------------------------------------------------------------------


def ensure_concave_terminal(p: ProblemSpec, margin: float = 1e-6) -> tuple[ProblemSpec, float]:
    """Return an equivalent problem whose terminal matrix is negative semidefinite.

    With the block-Hamiltonian norm invariant, replacing L by L - alpha*I only
    shifts the objective by alpha*||x0||^2. Returns the new problem and alpha.
    """
    lam_max = float(np.max(np.linalg.eigvalsh(p.L)))
    if lam_max <= 1e-12:
        return p, 0.0
    if detect_block_structure(p.A, p.B) is None:
        raise GlobalMethodInapplicable(
            f"L has a positive eigenvalue ({lam_max:.6g}) and (A, B) has no norm invariant"
        )
    alpha = lam_max + margin
    return p.replace(L=p.L - alpha * np.eye(p.n)), alpha


# ---------------------------------------------------------------------------
# Helpers shared by the sweeps
# ---------------------------------------------------------------------------


class _GridControl:
    """Fast scalar evaluation of a piecewise-linear control."""

    def __init__(self, u: ControlSignal):
        self.v = u.values
        self.h = u.grid.step
        self.last = u.grid.num_nodes - 2

    def __call__(self, t):
        s = t / self.h
        j = min(max(int(s), 0), self.last)
        th = s - j
        return (1.0 - th) * self.v[j] + th * self.v[j + 1]


class _CostateInterpolant:
    """Costate at arbitrary times.

    Values at nodes come from the backward sweep, values at interval midpoints
    from an extra RK4 half step; in between, cubic Hermite interpolation with
    slopes taken from the costate equation itself.
    """

    def __init__(self, p: ProblemSpec, u_s: ControlSignal, psi: Trajectory):
        mids = half_step_states(p, u_s, psi, backward=True)
        N, n = psi.states.shape
        vals = np.empty((2 * N - 1, n))
        vals[0::2] = psi.states
        vals[1::2] = mids
        uh = np.empty(2 * N - 1)
        uh[0::2] = u_s.values
        uh[1::2] = u_s.midpoints()
        self.vals = vals
        self.slopes = -(vals @ p.A + uh[:, None] * (vals @ p.B))
        self.hh = 0.5 * u_s.grid.step
        self.last = 2 * N - 3

    def __call__(self, t):
        s = t / self.hh
        j = min(max(int(s), 0), self.last)
        th = s - j
        if th == 0.0:
            return self.vals[j]
        th2 = th * th
        omt = 1.0 - th
        omt2 = omt * omt
        return ((1.0 + 2.0 * th) * omt2 * self.vals[j] + th * omt2 * self.hh * self.slopes[j]
                + th2 * (3.0 - 2.0 * th) * self.vals[j + 1] - th2 * omt * self.hh * self.slopes[j + 1])


class _Sweep:
    """Forward feedback integration against a fixed costate psi_s."""

    def __init__(self, p: ProblemSpec, u_s: ControlSignal, psi_s: Trajectory):
        self.p = p
        self.A, self.B, self.nu, self.beta = p.A, p.B, p.nu, p.beta
        self.AB_BA = p.A @ p.B - p.B @ p.A
        self.B2 = p.B @ p.B
        self.nB = frobenius_norm(p.B)
        self.grid = u_s.grid
        self.us = _GridControl(u_s)
        self.psi = _CostateInterpolant(p, u_s, psi_s)
        self.flags = set()

    # switching function and thresholds
    def k(self, t, x):
        return float(self.psi(t) @ (self.B @ x))

    def k_tol(self, t, x):
        return 1e-8 * (1.0 + np.linalg.norm(self.psi(t)) * np.linalg.norm(x) * self.nB)

    def _singular_parts(self, t, x):
        psi = self.psi(t)
        return float(psi @ (self.AB_BA @ x)), float(psi @ (self.B2 @ x)), psi

    def singular_u(self, t, x):
        num, den, psi = self._singular_parts(t, x)
        u_ref = self.us(t)
        if den == 0.0:
            return self.nu if num > 0 else -self.nu
        return min(max(u_ref + num / den, -self.nu), self.nu)

    def control(self, mode):
        nu = self.nu
        if mode == BANG_PLUS:
            return lambda t, x: nu
        if mode == BANG_MINUS:
            return lambda t, x: -nu
        if mode == SINGULAR:
            return self.singular_u
        if mode == INTERIOR:
            return lambda t, x: min(max(self.k(t, x) / (2.0 * self.beta), -nu), nu)
        raise ValueError(mode)

    def decide(self, t, x):
        """Mode for a stage starting at (t, x)."""
        k = self.k(t, x)
        tol = self.k_tol(t, x)
        if k > tol:
            return BANG_PLUS
        if k < -tol:
            return BANG_MINUS
        return self.decide_at_zero(t, x)

    def decide_at_zero(self, t, x):
        """Choose the stage control where K vanishes.

        A bang is admissible if it drives K away from zero in its own
        direction; +nu wins ties. If neither bang is admissible, K is held at
        zero by the singular control.
        """
        num, den, psi = self._singular_parts(t, x)
        u_ref = self.us(t)
        # dK/dt under u = +nu and u = -nu
        dk_plus = -num + (self.nu - u_ref) * den
        dk_minus = -num - (self.nu + u_ref) * den
        if dk_plus > 0:
            return BANG_PLUS
        if dk_minus < 0:
            return BANG_MINUS
        if abs(den) <= 1e-10 * (1.0 + np.linalg.norm(psi) * np.linalg.norm(x) * self.nB ** 2):
            self.flags.add("singular-undefined")
            return BANG_PLUS if abs(dk_plus) >= abs(dk_minus) else BANG_MINUS
        u = u_ref + num / den
        if u > self.nu or u < -self.nu:
            # bound reached on entry; arc infeasible
            self.flags.add("singular-clamped")
            return BANG_PLUS if u > 0 else BANG_MINUS
        return SINGULAR

    def step(self, mode, t, x, dt):
        return rk4_feedback_step(self.A, self.B, t, x, dt, self.control(mode))

    def find_switch(self, mode, t0, x0, t1):
        """Earliest point in (t0, t1] where K leaves the sign of the bang
        ``mode``; returns (tc, xc) or None."""
        sgn = 1.0 if mode == BANG_PLUS else -1.0
        ctrl = self.control(mode)

        def g(tc):
            return sgn * self.k(tc, rk4_feedback_step(self.A, self.B, t0, x0, tc - t0, ctrl))

        x1 = rk4_feedback_step(self.A, self.B, t0, x0, t1 - t0, ctrl)
        if sgn * self.k(t1, x1) >= -self.k_tol(t1, x1):
            return None
        if g(t0) <= 0.0:
            return None
        tc = brentq(g, t0, t1, xtol=1e-12 * self.grid.step, rtol=4 * np.finfo(float).eps)
        return tc, rk4_feedback_step(self.A, self.B, t0, x0, tc - t0, ctrl)


class _SegmentLog:
    def __init__(self, t0, kind):
        self.items = [[t0, kind]]

    def switch(self, t, kind):
        if kind != self.items[-1][1]:
            if t <= self.items[-1][0]:
                self.items[-1][1] = kind
            else:
                self.items.append([t, kind])

    def close(self, T):
        out = []
        for i, (t0, kind) in enumerate(self.items):
            t1 = self.items[i + 1][0] if i + 1 < len(self.items) else T
            out.append(Segment(float(t0), float(t1), kind))
        merged = [out[0]]
        for s in out[1:]:
            if s.kind == merged[-1].kind:
                merged[-1] = Segment(merged[-1].t_start, s.t_end, s.kind)
            else:
                merged.append(s)
        return tuple(merged)


def segments_from_control(u: ControlSignal, nu: float, tol: float = 1e-12) -> tuple:
    """Classify nodes of a control as bang+/bang-/interior segments."""
    t = u.grid.times
    kinds = np.where(u.values >= nu - tol, BANG_PLUS, np.where(u.values <= -nu + tol, BANG_MINUS, INTERIOR))
    log = _SegmentLog(0.0, kinds[0])
    for j in range(1, len(kinds)):
        log.switch(t[j], kinds[j])
    return log.close(u.grid.T)


# ---------------------------------------------------------------------------
# Forward sweeps
# ---------------------------------------------------------------------------


def _sweep_regular(sw: _Sweep, x0):
    """beta > 0: continuous feedback, plain RK4."""
    grid = sw.grid
    t = grid.times
    N = grid.num_nodes
    U = np.empty(N)
    ctrl = sw.control(INTERIOR)
    x = x0
    for j in range(N - 1):
        U[j] = ctrl(t[j], x)
        x = rk4_feedback_step(sw.A, sw.B, t[j], x, t[j + 1] - t[j], ctrl)
    U[-1] = ctrl(t[-1], x)
    return U


def _advance_staged(sw: _Sweep, mode, log, t0, t1, x, allow_switch=True):
    """Integrate one grid interval in the staged manner; returns (mode, x)."""
    tau = t0
    for _ in range(MAX_SUBSTAGES):
        if allow_switch and mode in (BANG_PLUS, BANG_MINUS):
            hit = sw.find_switch(mode, tau, x, t1)
            if hit is not None:
                tc, xc = hit
                new = sw.decide_at_zero(tc, xc)
                tau, x = tc, xc
                if new == mode:
                    allow_switch = False
                    continue
                mode = new
                log.switch(tc, mode)
                continue
        return mode, sw.step(mode, tau, x, t1 - tau)
    return mode, sw.step(mode, tau, x, t1 - tau)


def _renode(sw: _Sweep, mode, t, x):
    """Mode check at a grid node."""
    if mode == SINGULAR:
        num, den, psi = sw._singular_parts(t, x)
        u_ref = sw.us(t)
        if -num + (sw.nu - u_ref) * den > 0:
            return BANG_PLUS
        if -num - (sw.nu + u_ref) * den < 0:
            return BANG_MINUS
        if abs(den) <= 1e-10 * (1.0 + np.linalg.norm(psi) * np.linalg.norm(x) * sw.nB ** 2):
            sw.flags.add("singular-undefined")
            return sw.decide_at_zero(t, x)
        return SINGULAR
    k = sw.k(t, x)
    tol = sw.k_tol(t, x)
    if abs(k) <= tol:
        return sw.decide_at_zero(t, x)
    if (k > 0) != (mode == BANG_PLUS):
        return BANG_PLUS if k > 0 else BANG_MINUS
    return mode


def _sweep_staged(sw: _Sweep, x0):
    grid = sw.grid
    t = grid.times
    N = grid.num_nodes
    U = np.empty(N)
    x = x0
    mode = sw.decide(0.0, x)
    log = _SegmentLog(0.0, mode)
    for j in range(N - 1):
        U[j] = sw.control(mode)(t[j], x)
        mode, x = _advance_staged(sw, mode, log, t[j], t[j + 1], x)
        new = _renode(sw, mode, t[j + 1], x)
        if new != mode:
            mode = new
            log.switch(t[j + 1], mode)
    U[-1] = sw.control(mode)(t[-1], x)
    if mode == SINGULAR:
        sw.flags.add("singular-to-T")
    return U, log.close(grid.T)


def chattering_windows(values, min_changes: int = 5, span: int = 50):
    """Node ranges (first_change, last_change) where the control sign flips at
    least ``min_changes`` times within ``span`` nodes."""
    s = np.sign(values)
    changes = np.flatnonzero(s[1:] != s[:-1]) + 1
    marked = np.zeros(len(changes), dtype=bool)
    for i in range(len(changes) - min_changes + 1):
        if changes[i + min_changes - 1] - changes[i] <= span:
            marked[i:i + min_changes] = True
    windows = []
    for c in changes[marked]:
        if windows and c - windows[-1][1] <= span:
            windows[-1][1] = c
        else:
            windows.append([c, c])
    return [(int(a), int(b)) for a, b in windows]


def _sweep_bang_only(sw: _Sweep, x0, min_changes, span):
    """Sign feedback held over each grid step, then chattering windows are
    replaced by singular arcs and the sweep is redone."""
    grid = sw.grid
    t = grid.times
    N = grid.num_nodes
    nu = sw.nu

    def sign_law(j, x):
        return BANG_PLUS if sw.k(t[j], x) >= 0.0 else BANG_MINUS

    U = np.empty(N)
    X = np.empty((N, len(x0)))
    x = X[0] = x0
    for j in range(N - 1):
        mode = sign_law(j, x)
        U[j] = nu if mode == BANG_PLUS else -nu
        x = X[j + 1] = sw.step(mode, t[j], x, t[j + 1] - t[j])
    U[-1] = nu if sign_law(N - 1, x) == BANG_PLUS else -nu
    windows = chattering_windows(U, min_changes, span)
    if not windows:
        return U, segments_from_control(ControlSignal(grid, U), nu), windows, X

    # redo with the windows collapsed onto singular arcs
    in_window = np.full(N, -1)
    for w, (a, b) in enumerate(windows):
        in_window[max(a - 1, 0):b + 1] = w
    U = np.empty(N)
    x = X[0] = x0
    mode = sign_law(0, x)
    log = _SegmentLog(0.0, mode)
    for j in range(N - 1):
        w = in_window[j]
        if w < 0:
            mode = sign_law(j, x)
            log.switch(t[j], mode)
            U[j] = nu if mode == BANG_PLUS else -nu
            x = X[j + 1] = sw.step(mode, t[j], x, t[j + 1] - t[j])
            continue
        a, b = windows[w]
        if j == max(a - 1, 0) and mode != SINGULAR:
            mode = sign_law(j, x)
            log.switch(t[j], mode)
        U[j] = sw.control(mode)(t[j], x)
        if mode == SINGULAR:
            x = sw.step(mode, t[j], x, t[j + 1] - t[j])
        else:
            hit = sw.find_switch(mode, t[j], x, t[j + 1])
            if hit is None:
                x = sw.step(mode, t[j], x, t[j + 1] - t[j])
            else:
                tc, xc = hit
                mode = SINGULAR
                log.switch(tc, mode)
                x = sw.step(mode, tc, xc, t[j + 1] - tc)
        X[j + 1] = x
        if j + 1 == b:
            mode = sw.decide_at_zero(t[j + 1], x) if mode == SINGULAR else mode
            log.switch(t[j + 1], mode)
    U[-1] = sw.control(mode)(t[-1], x) if mode in (SINGULAR, INTERIOR) else (
        nu if sign_law(N - 1, x) == BANG_PLUS else -nu)
    return U, log.close(grid.T), windows, X


@dataclass(frozen=True)
class BangOnlySweep:
    """Raw output of one sign-feedback sweep: node controls, the states the
    sweep itself produced (before grid re-simulation) and collapsed windows."""

    values: np.ndarray
    states: np.ndarray
    segments: tuple
    windows: tuple


def bang_only_sweep(p: ProblemSpec, u_s: ControlSignal, psi_s: Trajectory,
                    min_changes: int = 5, span: int = 50) -> BangOnlySweep:
    sw = _Sweep(p, u_s, psi_s)
    U, segments, windows, X = _sweep_bang_only(sw, p.x0, min_changes, span)
    return BangOnlySweep(U, X, segments, tuple(windows))


# ---------------------------------------------------------------------------
# Iterations
# ---------------------------------------------------------------------------


def _costate(p: ProblemSpec, u: ControlSignal, x: Trajectory) -> Trajectory:
    return integrate_dual(p, u, transversality_costate(p.L, x.final))


def _krotov_step(p, u_s, x_s, psi_s=None, bang_only=False, chatter=(5, 50)):
    t_start = time.perf_counter()
    if psi_s is None:
        psi_s = _costate(p, u_s, x_s)
    sw = _Sweep(p, u_s, psi_s)
    windows = []
    if p.beta > 0:
        U = _sweep_regular(sw, p.x0)
        segments = segments_from_control(ControlSignal(u_s.grid, U), p.nu)
    elif bang_only:
        U, segments, windows, _ = _sweep_bang_only(sw, p.x0, *chatter)
    else:
        U, segments = _sweep_staged(sw, p.x0)
    u_next = ControlSignal(u_s.grid, U, nu=p.nu)
    x_next, obj = evaluate(p, u_next)
    psi_next = _costate(p, u_next, x_next)
    res = pmp_residual(p, x_next, psi_next, u_next)
    flags = set(sw.flags)
    if windows:
        flags.add("chattering-collapsed")
    if obj.total > objective(p, x_s, u_s).total + MONOTONE_SLACK:
        flags.add("stalled")
    rec = IterationRecord(-1, obj, res, segments, time.perf_counter() - t_start, tuple(sorted(flags)))
    return u_next, x_next, psi_next, rec


def krotov_iteration(p: ProblemSpec, u_s: ControlSignal, x_s: Trajectory, psi_s: Optional[Trajectory] = None):
    """One staged iteration of the global method.

    Returns ``(u_next, x_next, record)``; ``x_next`` is the RK4 trajectory of
    ``u_next`` on the grid. Requires a concave terminal form.
    """
    u, x, _, rec = _krotov_step(p, u_s, x_s, psi_s)
    return u, x, rec


def krotov_iteration_bang_only(p: ProblemSpec, u_s: ControlSignal, x_s: Trajectory,
                               psi_s: Optional[Trajectory] = None, min_changes=5, span=50):
    """Global-method iteration with pure sign feedback; chattering windows are
    collapsed to singular arcs afterwards."""
    u, x, _, rec = _krotov_step(p, u_s, x_s, psi_s, bang_only=True, chatter=(min_changes, span))
    return u, x, rec


def adjoint_gradient(p: ProblemSpec, u: ControlSignal, x: Optional[Trajectory] = None,
                     psi: Optional[Trajectory] = None) -> np.ndarray:
    """L2 gradient of the objective w.r.t. the control at each node,
    -(K(psi, x) - 2 beta u)."""
    if x is None:
        x = integrate_forward(p, u)
    if psi is None:
        psi = _costate(p, u, x)
    K = np.einsum("ki,ki->k", psi.states, x.states @ p.B.T)
    return -(K - 2.0 * p.beta * u.values)


def _gradient_step(p, u_s, x_s=None, psi_s=None, sigma0=1.0, shrink=0.5, max_trials=30):
    t_start = time.perf_counter()
    if x_s is None:
        x_s = integrate_forward(p, u_s)
    if psi_s is None:
        psi_s = _costate(p, u_s, x_s)
    g = adjoint_gradient(p, u_s, x_s, psi_s)
    base = objective(p, x_s, u_s).total
    sigma = sigma0
    flags = ()
    for _ in range(max_trials):
        trial = ControlSignal(u_s.grid, u_s.values - sigma * g, nu=p.nu)
        x_t, obj = evaluate(p, trial)
        if obj.total < base:
            u_next, x_next = trial, x_t
            break
        sigma *= shrink
    else:
        u_next, x_next, obj = u_s, x_s, objective(p, x_s, u_s)
        flags = ("stalled",)
    psi_next = _costate(p, u_next, x_next)
    res = pmp_residual(p, x_next, psi_next, u_next)
    segments = segments_from_control(u_next, p.nu)
    rec = IterationRecord(-1, obj, res, segments, time.perf_counter() - t_start, flags)
    return u_next, x_next, psi_next, rec


def gradient_iteration(p: ProblemSpec, u_s: ControlSignal, sigma0=1.0, shrink=0.5, max_trials=30):
    """Projected gradient step with halving backtracking on the step size."""
    u, x, _, rec = _gradient_step(p, u_s, sigma0=sigma0, shrink=shrink, max_trials=max_trials)
    return u, x, rec


# ---------------------------------------------------------------------------
# Improvement certificate
# ---------------------------------------------------------------------------


def improvement_certificate(p: ProblemSpec, psi_s: Trajectory, x_s: Trajectory, u_s: ControlSignal,
                            x_next: Trajectory, u_next: ControlSignal) -> tuple[float, float, float]:
    """Split I(v_s) - I(v_next) into control, state and terminal parts.

    R_s(t, x, u) = psi_s'.x + psi_s.(A + uB)x - beta u^2 and
    G_s(x) = psi_s(T).x - psi_s(0).x0 + (x, Lx). The state-dependent part of
    R is integrated with composite Simpson (midpoint states from an RK4 half
    step); the beta u^2 part uses the same trapezoid rule as the objective.
    """
    if not (psi_s.grid == x_s.grid == u_s.grid == x_next.grid == u_next.grid):
        raise ValueError("all inputs must share one grid")
    h = u_s.grid.step
    A, B = p.A, p.B
    psi_mid = half_step_states(p, u_s, psi_s, backward=True)
    xs_mid = half_step_states(p, u_s, x_s)
    xn_mid = half_step_states(p, u_next, x_next)

    def R(psi, us_ref, x, u):
        dpsi = -(psi @ A + us_ref[:, None] * (psi @ B))
        return np.einsum("ki,ki->k", dpsi, x) + np.einsum("ki,ki->k", psi, x @ A.T + u[:, None] * (x @ B.T))

    def simpson(f_nodes, f_mid):
        return float(h / 6.0 * np.sum(f_nodes[:-1] + 4.0 * f_mid + f_nodes[1:]))

    def integral(x_nodes, x_mid, u):
        return simpson(R(psi_s.states, u_s.values, x_nodes, u.values),
                       R(psi_mid, u_s.midpoints(), x_mid, u.midpoints()))

    w = u_s.grid.trapezoid_weights()
    reg_next = p.beta * float(w @ u_next.values ** 2)
    reg_s = p.beta * float(w @ u_s.values ** 2)
    r_next_next = integral(x_next.states, xn_mid, u_next) - reg_next
    r_next_s = integral(x_next.states, xn_mid, u_s) - reg_s
    r_s_s = integral(x_s.states, xs_mid, u_s) - reg_s

    psiT, psi0 = psi_s.states[-1], psi_s.states[0]

    def G(xT):
        return float(psiT @ xT - psi0 @ p.x0 + xT @ p.L @ xT)

    return (r_next_next - r_next_s, r_next_s - r_s_s, G(x_s.final) - G(x_next.final))


# ---------------------------------------------------------------------------
# Outer loop
# ---------------------------------------------------------------------------


def solve(p: ProblemSpec, u0: ControlSignal, cfg: SolverConfig) -> SolverReport:
    """Iterate the configured method from ``u0``.

    The history is monotone: a step that does not improve the working
    objective ends the run as ``"stalled"`` and is not recorded. Objectives
    are reported for the original terminal matrix; for the regularized global
    method ``total`` includes alpha_reg * int u^2 while ``terminal`` is the
    pure terminal value.
    """
    if cfg.grid is not None and cfg.grid != u0.grid:
        raise ValueError("initial control is not on the configured grid")
    if np.any(np.abs(u0.values) > p.nu):
        raise ValueError("initial control violates |u| <= nu")
    work, shift = p, 0.0
    if cfg.method in ("global", "global-regularized"):
        work, shift = ensure_concave_terminal(p)
        if cfg.method == "global-regularized":
            work = work.replace(beta=p.beta + cfg.alpha_reg)
    offset = shift * float(p.x0 @ p.x0)

    def report(obj: ObjectiveValue) -> ObjectiveValue:
        return ObjectiveValue(obj.terminal + offset, obj.integral, obj.beta)

    t0 = time.perf_counter()
    u = ControlSignal(u0.grid, u0.values, nu=p.nu)
    x, obj = evaluate(work, u)
    psi = _costate(work, u, x)
    res = pmp_residual(work, x, psi, u)
    history = [IterationRecord(0, report(obj), res, segments_from_control(u, p.nu), time.perf_counter() - t0)]
    termination = "max-iters"
    for it in range(1, cfg.max_iters + 1):
        if cfg.method == "gradient":
            u1, x1, psi1, rec = _gradient_step(work, u, x, psi)
        else:
            u1, x1, psi1, rec = _krotov_step(work, u, x, psi,
                                             bang_only=cfg.singular_mode != "staged",
                                             chatter=(cfg.chatter_changes, cfg.chatter_span))
        prev = history[-1].objective.total
        rec = replace(rec, index=it, objective=report(rec.objective))
        if rec.stalled or rec.objective.total > prev + MONOTONE_SLACK:
            termination = "stalled"
            break
        history.append(rec)
        u, x, psi = u1, x1, psi1
        if prev - rec.objective.total < cfg.stop_tol or rec.pmp_residual.max_violation < cfg.pmp_tol:
            termination = "converged"
            break
    return SolverReport(cfg, history, u, x, termination, shift)


def write_iterations_csv(history, path) -> None:
    """Iteration table: iter,objective,terminal,integral,pmp_violation,seconds."""
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["iter", "objective", "terminal", "integral", "pmp_violation", "seconds"])
        for r in history:
            w.writerow([r.index, repr(float(r.objective.total)), repr(float(r.objective.terminal)),
                        repr(float(r.objective.integral)), repr(float(r.pmp_residual.max_violation)),
                        f"{r.wall_time:.3f}"])


def write_control_csv(u: ControlSignal, path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "u"])
        for t, v in zip(u.grid.times, u.values):
            w.writerow([repr(float(t)), repr(float(v))])
