"""Problem data, time grids, signals and structural analysis of (A, B).

Matrices and vectors are plain float64 numpy arrays. Containers freeze their
arrays on construction so instances can be shared freely.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

SYMMETRY_TOL = 1e-12
COMMUTE_TOL = 1e-12


class ProblemError(ValueError):
    """Raised for malformed problem data."""


def _frozen(a, ndim=None, name="array"):
    arr = np.array(a, dtype=float)
    if ndim is not None and arr.ndim != ndim:
        raise ProblemError(f"{name}: expected {ndim}-d array, got shape {arr.shape}")
    if arr.size == 0:
        raise ProblemError(f"{name}: empty")
    if not np.all(np.isfinite(arr)):
        raise ProblemError(f"{name}: non-finite entries")
    arr.setflags(write=False)
    return arr


def frobenius_norm(M) -> float:
    """Euclidean (Frobenius) norm, sqrt of the sum of squared entries."""
    M = np.asarray(M, dtype=float)
    scale = float(np.max(np.abs(M))) if M.size else 0.0
    if scale == 0.0:
        return 0.0
    S = M / scale  # avoids underflow/overflow of the squares
    return scale * float(np.sqrt(np.sum(S * S)))


def commutator(M, N) -> np.ndarray:
    """Return ``M @ N - N @ M``."""
    M = np.asarray(M, dtype=float)
    N = np.asarray(N, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1] or M.shape != N.shape:
        raise ValueError(f"commutator needs equal square matrices, got {M.shape} and {N.shape}")
    return M @ N - N @ M


def symmetry_defect(M) -> float:
    M = np.asarray(M, dtype=float)
    return float(np.max(np.abs(M - M.T)))


def _sym_tol(M) -> float:
    return SYMMETRY_TOL * (1.0 + float(np.max(np.abs(M))))


# ---------------------------------------------------------------------------
# Problem definition
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ProblemSpec:
    """Minimise (x(T), L x(T)) + beta * int u^2 subject to x' = (A + uB)x,
    x(0) = x0, |u| <= nu.

    Construction validates the data and raises :class:`ProblemError` on the
    first violated invariant; use :func:`validate_problem` to collect all of
    them without raising.
    """

    A: np.ndarray
    B: np.ndarray
    L: np.ndarray
    x0: np.ndarray
    T: float
    nu: float
    beta: float = 0.0

    def __post_init__(self):
        for name in ("A", "B", "L"):
            object.__setattr__(self, name, _frozen(getattr(self, name), 2, name))
        object.__setattr__(self, "x0", _frozen(self.x0, 1, "x0"))
        for name in ("T", "nu", "beta"):
            object.__setattr__(self, name, float(getattr(self, name)))
        violations = _violations(self)
        if violations:
            raise ProblemError("; ".join(violations))

    @property
    def n(self) -> int:
        return self.x0.shape[0]

    def replace(self, **changes) -> "ProblemSpec":
        kw = dict(A=self.A, B=self.B, L=self.L, x0=self.x0, T=self.T, nu=self.nu, beta=self.beta)
        kw.update(changes)
        return ProblemSpec(**kw)

    def to_dict(self) -> dict:
        return {
            "A": self.A.tolist(),
            "B": self.B.tolist(),
            "L": self.L.tolist(),
            "x0": self.x0.tolist(),
            "T": self.T,
            "nu": self.nu,
            "beta": self.beta,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ProblemSpec":
        missing = [k for k in ("A", "B", "L", "x0", "T", "nu") if k not in d]
        if missing:
            raise ProblemError(f"missing fields: {', '.join(missing)}")
        return cls(A=d["A"], B=d["B"], L=d["L"], x0=d["x0"], T=d["T"], nu=d["nu"],
                   beta=d.get("beta", 0.0))


def _violations(p) -> list[str]:
    out = []
    A, B, L, x0 = (np.asarray(m, dtype=float) for m in (p.A, p.B, p.L, p.x0))
    n = x0.shape[0] if x0.ndim == 1 else -1
    for name, M in (("A", A), ("B", B), ("L", L)):
        if M.ndim != 2 or M.shape != (n, n):
            out.append(f"{name} must be {n}x{n}, got shape {M.shape}")
        elif not np.all(np.isfinite(M)):
            out.append(f"{name} has non-finite entries")
    if L.ndim == 2 and L.shape[0] == L.shape[1] and np.all(np.isfinite(L)):
        if symmetry_defect(L) > _sym_tol(L):
            out.append(f"L is not symmetric (defect {symmetry_defect(L):.3e})")
    if not p.T > 0:
        out.append(f"T must be positive, got {p.T}")
    if not p.nu > 0:
        out.append(f"nu must be positive, got {p.nu}")
    if not p.beta >= 0:
        out.append(f"beta must be nonnegative, got {p.beta}")
    if x0.ndim == 1 and not np.linalg.norm(x0) > 0:
        out.append("x0 must be nonzero")
    return out


@dataclass(frozen=True)
class ValidationReport:
    violations: list
    symmetry_defect: float
    block_structure: bool
    commuting: bool

    @property
    def valid(self) -> bool:
        return not self.violations


class _RawProblem:
    def __init__(self, A, B, L, x0, T, nu, beta=0.0):
        self.A, self.B, self.L, self.x0 = A, B, L, x0
        self.T, self.nu, self.beta = T, nu, beta


def validate_problem(p) -> ValidationReport:
    """Check every problem invariant and collect the violations.

    Accepts a :class:`ProblemSpec` or any object (or dict) with the same
    fields, so data that would fail construction can still be inspected.
    """
    if isinstance(p, dict):
        p = _RawProblem(**p)
    try:
        violations = _violations(p)
    except (TypeError, ValueError) as exc:
        return ValidationReport([f"unreadable data: {exc}"], float("nan"), False, False)
    A, B, L = (np.asarray(m, dtype=float) for m in (p.A, p.B, p.L))
    defect = symmetry_defect(L) if L.ndim == 2 and L.shape[0] == L.shape[1] else float("nan")
    block = commuting = False
    if A.ndim == 2 and A.shape == B.shape and A.shape[0] == A.shape[1]:
        block = detect_block_structure(A, B) is not None
        scale = 1.0 + frobenius_norm(A) * frobenius_norm(B)
        commuting = frobenius_norm(commutator(A, B)) <= COMMUTE_TOL * scale
    return ValidationReport(violations, defect, block, commuting)


def load_problem(path) -> ProblemSpec:
    """Read a problem JSON file."""
    text = Path(path).read_text(encoding="utf-8")
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ProblemError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    if not isinstance(data, dict):
        raise ProblemError(f"{path}: top level must be an object")
    try:
        return ProblemSpec.from_dict(data)
    except (TypeError, ValueError) as exc:
        raise ProblemError(f"{path}: {exc}") from None


def _num12(v: float) -> float:
    return float(f"{v:.12g}")


def save_problem(p: ProblemSpec, path) -> None:
    """Write ``p`` as JSON with 12 significant digits per number."""
    d = p.to_dict()
    d = {k: (np.vectorize(_num12)(np.asarray(v)).tolist() if isinstance(v, list) else _num12(v))
         for k, v in d.items()}
    Path(path).write_text(json.dumps(d, indent=2) + "\n", encoding="utf-8")


# ---------------------------------------------------------------------------
# Grids, signals, trajectories
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GridSpec:
    """Uniform grid of ``num_nodes`` points on [0, T]."""

    T: float
    num_nodes: int

    def __post_init__(self):
        if self.num_nodes < 2:
            raise ValueError("a grid needs at least 2 nodes")
        if not self.T > 0:
            raise ValueError("grid horizon must be positive")

    @classmethod
    def from_step(cls, T: float, h: float) -> "GridSpec":
        n_int = int(round(T / h))
        if n_int < 1 or abs(n_int * h - T) > 1e-9 * T:
            raise ValueError(f"step {h} does not divide horizon {T}")
        return cls(float(T), n_int + 1)

    @property
    def step(self) -> float:
        return self.T / (self.num_nodes - 1)

    @property
    def times(self) -> np.ndarray:
        t = np.linspace(0.0, self.T, self.num_nodes)
        t.setflags(write=False)
        return t

    def trapezoid_weights(self) -> np.ndarray:
        w = np.full(self.num_nodes, self.step)
        w[0] = w[-1] = 0.5 * self.step
        return w


@dataclass(frozen=True)
class ControlSignal:
    """Control values at grid nodes, linear in between.

    Values are clamped to [-nu, nu] when a bound is given; ``clamped`` tells
    whether anything was cut.
    """

    grid: GridSpec
    values: np.ndarray
    nu: Optional[float] = None
    clamped: bool = field(default=False, compare=False)

    def __post_init__(self):
        v = np.array(self.values, dtype=float).reshape(-1)
        if v.shape[0] != self.grid.num_nodes:
            raise ValueError(f"expected {self.grid.num_nodes} control values, got {v.shape[0]}")
        if not np.all(np.isfinite(v)):
            raise ValueError("control has non-finite values")
        clamped = False
        if self.nu is not None:
            c = np.clip(v, -self.nu, self.nu)
            clamped = bool(np.any(c != v))
            v = c
        v.setflags(write=False)
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "clamped", clamped)

    @classmethod
    def constant(cls, grid: GridSpec, c: float, nu=None) -> "ControlSignal":
        return cls(grid, np.full(grid.num_nodes, float(c)), nu)

    @classmethod
    def piecewise(cls, grid: GridSpec, pieces, nu=None, default=0.0) -> "ControlSignal":
        """Nodes in [t0, t1) take value v; the final node also joins the last
        piece that ends at T."""
        t = grid.times
        v = np.full(grid.num_nodes, float(default))
        for t0, t1, val in pieces:
            mask = (t >= t0) & (t < t1)
            if t1 >= grid.T:
                mask |= t >= t0
            v[mask] = val
        return cls(grid, v, nu)

    @classmethod
    def from_function(cls, grid: GridSpec, fn, nu=None) -> "ControlSignal":
        return cls(grid, np.array([fn(t) for t in grid.times]), nu)

    def __call__(self, t):
        return np.interp(t, self.grid.times, self.values)

    def midpoints(self) -> np.ndarray:
        return 0.5 * (self.values[:-1] + self.values[1:])


@dataclass(frozen=True)
class Trajectory:
    """States at grid nodes; ``states[k]`` belongs to time ``grid.times[k]``."""

    grid: GridSpec
    states: np.ndarray

    def __post_init__(self):
        s = np.array(self.states, dtype=float)
        if s.ndim != 2 or s.shape[0] != self.grid.num_nodes:
            raise ValueError(f"states must have shape ({self.grid.num_nodes}, n), got {s.shape}")
        s.setflags(write=False)
        object.__setattr__(self, "states", s)

    @property
    def final(self) -> np.ndarray:
        return self.states[-1]

    @property
    def initial(self) -> np.ndarray:
        return self.states[0]

    def norms(self) -> np.ndarray:
        return np.linalg.norm(self.states, axis=1)


# ---------------------------------------------------------------------------
# Block-Hamiltonian structure
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BlockHamiltonianStructure:
    """A = [[0, PA], [-PA, 0]], B = [[0, PB], [-PB, 0]] with PA, PB symmetric."""

    PA: np.ndarray
    PB: np.ndarray

    @property
    def half_dim(self) -> int:
        return self.PA.shape[0]

    def hamiltonian_block(self, u: float) -> np.ndarray:
        return self.PA + u * self.PB

    def reconstruct(self) -> tuple[np.ndarray, np.ndarray]:
        return _embed(self.PA), _embed(self.PB)


def _embed(P):
    m = P.shape[0]
    out = np.zeros((2 * m, 2 * m))
    out[:m, m:] = P
    out[m:, :m] = -P
    return out


def detect_block_structure(A, B) -> Optional[BlockHamiltonianStructure]:
    """Return the Hamiltonian block decomposition of (A, B), or None."""
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    if A.ndim != 2 or A.shape != B.shape or A.shape[0] != A.shape[1]:
        return None
    n = A.shape[0]
    if n % 2:
        return None
    m = n // 2
    blocks = []
    for M in (A, B):
        P = M[:m, m:]
        tol = SYMMETRY_TOL * (1.0 + float(np.max(np.abs(M))))
        if (np.max(np.abs(M[:m, :m])) > tol or np.max(np.abs(M[m:, m:])) > tol
                or np.max(np.abs(M[m:, :m] + P)) > tol or symmetry_defect(P) > tol):
            return None
        P = P.copy()
        P.setflags(write=False)
        blocks.append(P)
    return BlockHamiltonianStructure(*blocks)


def block_to_complex(s: BlockHamiltonianStructure, u: float = 0.0) -> tuple[np.ndarray, np.ndarray]:
    """Split H = H1 + i*H2 of the complex form w' = iHw at control ``u``.

    The complex state is w = y - iz; with that convention H1 = PA + u*PB and
    H2 = 0 reproduce y' = Pz, z' = -Py.
    """
    H1 = np.array(s.hamiltonian_block(u), dtype=float)
    return H1, np.zeros_like(H1)


def complex_split_rhs(H1, H2, y, z) -> tuple[np.ndarray, np.ndarray]:
    """Real and imaginary parts of iH w for w = y - iz, returned as (y', z')."""
    return H1 @ z - H2 @ y, -(H1 @ y) - H2 @ z
