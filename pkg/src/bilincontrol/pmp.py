"""Maximum-principle toolkit: switching function, extremal controls,
commutator chains and singular-arc quantities.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np

from .core import ControlSignal, ProblemSpec, Trajectory, commutator, frobenius_norm

CHAIN_TOL = 1e-12
PMP_NODE_TOL = 1e-6


class SingularControlUndefined(ArithmeticError):
    """The singular-control denominator (B^2 x, psi) is numerically zero."""


def _vec(v, n=None, name="vector"):
    v = np.asarray(v, dtype=float)
    if v.ndim != 1 or (n is not None and v.shape[0] != n):
        raise ValueError(f"{name}: expected length {n}, got shape {v.shape}")
    return v


def switching_value(psi, x, B) -> float:
    """K(psi, x) = (Bx, psi), the coefficient of u in the Pontryagin function."""
    B = np.asarray(B, dtype=float)
    n = B.shape[0]
    return float(_vec(psi, n, "psi") @ (B @ _vec(x, n, "x")))


def k_tolerance(psi, x, B) -> float:
    """Scale-aware zero threshold for the switching function."""
    return 1e-8 * (1.0 + np.linalg.norm(psi) * np.linalg.norm(x) * frobenius_norm(B))


def denominator_tolerance(psi, x, B) -> float:
    nb = frobenius_norm(B)
    return 1e-10 * (1.0 + np.linalg.norm(psi) * np.linalg.norm(x) * nb * nb)


class ExtremalSet(NamedTuple):
    """Maximiser set of the Pontryagin function over [-nu, nu].

    ``lo == hi`` except for the singular candidate (K = 0, beta = 0).
    """

    lo: float
    hi: float
    singular_candidate: bool = False

    @property
    def value(self) -> float:
        if self.singular_candidate:
            raise ValueError("extremal control is not unique on a singular candidate")
        return self.lo

    def distance(self, u: float) -> float:
        return max(self.lo - u, u - self.hi, 0.0)


def extremal_control(K: float, nu: float, beta: float = 0.0, k_tol: float = 0.0) -> ExtremalSet:
    """argmax over |u| <= nu of  u*K - beta*u^2."""
    if not nu > 0:
        raise ValueError("nu must be positive")
    if beta > 0:
        u = min(max(K / (2.0 * beta), -nu), nu)
        return ExtremalSet(u, u)
    if K > k_tol:
        return ExtremalSet(nu, nu)
    if K < -k_tol:
        return ExtremalSet(-nu, -nu)
    return ExtremalSet(-nu, nu, True)


def transversality_costate(L, xT) -> np.ndarray:
    """psi(T) = -2 L x(T)."""
    L = np.asarray(L, dtype=float)
    return -2.0 * (L @ _vec(xT, L.shape[0], "xT"))


def terminal_switching(L, B, xT) -> float:
    """K at t = T under transversality: -2 (L xT, B xT)."""
    L = np.asarray(L, dtype=float)
    B = np.asarray(B, dtype=float)
    xT = _vec(xT, L.shape[0], "xT")
    if B.shape != L.shape:
        raise ValueError("L and B must have equal shapes")
    return float(-2.0 * (L @ xT) @ (B @ xT))


@dataclass(frozen=True)
class CommutatorChain:
    """C(0) = B, D(0) = 0, C(s) = C(s-1)A - AC(s-1), D(s) = C(s-1)B - BC(s-1)."""

    C_seq: tuple
    D_seq: tuple
    first_nonzero_D: Optional[int]

    @property
    def depth(self) -> int:
        return len(self.C_seq) - 1

    def report(self) -> str:
        lines = ["s  |C(s)|  |D(s)|"]
        for s, (C, D) in enumerate(zip(self.C_seq, self.D_seq)):
            lines.append(f"{s}  {frobenius_norm(C):.6g}  {frobenius_norm(D):.6g}")
        if self.first_nonzero_D is None:
            zero = all(frobenius_norm(C) == 0.0 for C in self.C_seq[1:])
            lines.append("first nonzero D: none" + (" (chain identically zero)" if zero else ""))
        else:
            lines.append(f"first nonzero D: s={self.first_nonzero_D}")
        return "\n".join(lines)


def commutator_chain(A, B, max_depth: int = 6) -> CommutatorChain:
    """Differentiate the switching form until its u-coefficient D(s) is nonzero.

    Stops at the first nonzero D(s) or after ``max_depth`` levels.
    """
    if max_depth < 1:
        raise ValueError("max_depth must be >= 1")
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    nb = frobenius_norm(B)
    C_seq = [B.copy()]
    D_seq = [np.zeros_like(B)]
    first = None
    for s in range(1, max_depth + 1):
        prev = C_seq[-1]
        C_seq.append(commutator(prev, A))
        D_seq.append(commutator(prev, B))
        if frobenius_norm(D_seq[-1]) > CHAIN_TOL * (1.0 + frobenius_norm(prev) * nb):
            first = s
            break
    return CommutatorChain(tuple(C_seq), tuple(D_seq), first)


class SingularControl(NamedTuple):
    value: float
    clamped: bool


def singular_control_value(A, B, x, psi, u_prev: float, nu: float) -> SingularControl:
    """Control keeping dK/dt = 0: u_prev + ((AB - BA)x, psi) / (B^2 x, psi).

    ``u_prev`` is the reference control the costate was computed along.
    """
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    x = _vec(x, A.shape[0], "x")
    psi = _vec(psi, A.shape[0], "psi")
    Bx = B @ x
    den = float(psi @ (B @ Bx))
    if abs(den) <= denominator_tolerance(psi, x, B):
        raise SingularControlUndefined(f"(B^2 x, psi) = {den:.3e}")
    num = float(psi @ (A @ Bx - B @ (A @ x)))
    u = u_prev + num / den
    if u > nu:
        return SingularControl(nu, True)
    if u < -nu:
        return SingularControl(-nu, True)
    return SingularControl(u, False)


def singular_free_certificate(L, B) -> str:
    """Definiteness of the terminal switching form x -> -2 (B^T L x, x).

    Returns ``"definite-positive"``, ``"definite-negative"`` or
    ``"inconclusive"``; a definite form rules out singular controls.
    """
    L = np.asarray(L, dtype=float)
    B = np.asarray(B, dtype=float)
    M = -2.0 * B.T @ L
    eig = np.linalg.eigvalsh(0.5 * (M + M.T))
    tol = 1e-12 * (1.0 + np.max(np.abs(eig)))
    if np.all(eig > tol):
        return "definite-positive"
    if np.all(eig < -tol):
        return "definite-negative"
    return "inconclusive"


def switching_derivative(A, B, x, psi, u: float, u_ref: float) -> float:
    """dK/dt along x' = (A + uB)x with costate psi' = -(A^T + u_ref B^T)psi."""
    Bx = B @ x
    return float(psi @ (B @ (A @ x + u * Bx)) - psi @ (A @ Bx + u_ref * (B @ Bx)))


def switching_series(B, x: Trajectory, psi: Trajectory) -> np.ndarray:
    """K(psi(t_k), x(t_k)) at every node."""
    return np.einsum("ki,ki->k", psi.states, x.states @ np.asarray(B).T)


@dataclass(frozen=True)
class PmpResidual:
    max_violation: float
    violation_measure: float


def pmp_residual(p: ProblemSpec, x: Trajectory, psi: Trajectory, u: ControlSignal) -> PmpResidual:
    """Distance of u from the extremal set at every node.

    Nodes with |K| below the zero threshold are singular candidates and count
    as satisfied when beta = 0.
    """
    if not (x.grid == psi.grid == u.grid):
        raise ValueError("x, psi and u must share one grid")
    K = switching_series(p.B, x, psi)
    nb = frobenius_norm(p.B)
    tol = 1e-8 * (1.0 + np.linalg.norm(psi.states, axis=1) * np.linalg.norm(x.states, axis=1) * nb)
    v = u.values
    if p.beta > 0:
        target = np.clip(K / (2.0 * p.beta), -p.nu, p.nu)
        dist = np.abs(v - target)
    else:
        dist = np.where(K > tol, p.nu - v, np.where(K < -tol, v + p.nu, 0.0))
        dist = np.maximum(dist, 0.0)
    return PmpResidual(float(np.max(dist)), float(np.mean(dist > PMP_NODE_TOL)))
