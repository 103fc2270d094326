"""
Simulating a bilinear system and reading its structure
======================================================

The reference system has n=4 and a block-Hamiltonian pair (A, B), so every
trajectory stays on the sphere ||x|| = ||x0|| = 2.
"""

import numpy as np

from bilincontrol import data
from bilincontrol.core import ControlSignal, detect_block_structure
from bilincontrol.dynamics import evaluate, invariant_drift, reachability_bounds
from bilincontrol.pmp import commutator_chain

# problem, grid (h = 0.0005) and the constant starting control u = 0.3
p, grid, u = data.example(1)
x, obj = evaluate(p, u)
print(f"objective for u = 0.3: {obj.total:.6f}")
print(f"final state: {np.round(x.final, 6)}")

# the norm is an exact invariant; RK4 keeps it to rounding level
print(f"relative drift of ||x||^2: {invariant_drift(x):.2e}")

# a wild control does not break it either
rng = np.random.default_rng(0)
wild = ControlSignal(grid, rng.uniform(-p.nu, p.nu, grid.num_nodes), nu=p.nu)
print(f"drift under a random control: {invariant_drift(evaluate(p, wild)[0]):.2e}")

# the Gronwall bounds hold for every admissible control but are very loose here
b = reachability_bounds(p)
print(f"gamma = {b.gamma:.4f}, norm bounds [{b.lower:.4g}, {b.upper:.4g}]")

s = detect_block_structure(p.A, p.B)
print("PA =", s.PA.tolist(), " PB =", s.PB.tolist())

# how many derivatives of K before the control shows up?
print(commutator_chain(p.A, p.B).report())
