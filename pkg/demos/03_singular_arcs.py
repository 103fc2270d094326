"""
Singular arcs and chattering
============================

With commuting blocks (PB = I) the switching function K is constant along a
fixed control, and the improved control runs into K = 0 and has to stay
there. A naive sign feedback chatters on that surface; the bang-only sweep
spots the chatter and replaces it with the singular control.
"""

import numpy as np

from bilincontrol import data
from bilincontrol.core import ControlSignal, GridSpec, ProblemSpec
from bilincontrol.dynamics import integrate_dual, integrate_forward
from bilincontrol.improve import bang_only_sweep, krotov_iteration
from bilincontrol.pmp import commutator_chain, transversality_costate

Z = np.zeros((2, 2))
PA = np.diag([1.0, 2.0])
A = np.block([[Z, PA], [-PA, Z]])
B = np.block([[Z, np.eye(2)], [-np.eye(2), Z]])
p = ProblemSpec(A, B, data.L_REF, [1.0, 0.0, 0.0, 0.0], T=1.0, nu=1.0)
print(commutator_chain(A, B).report())

g = GridSpec.from_step(p.T, 0.001)
u = ControlSignal.constant(g, 0.0, nu=p.nu)
x = integrate_forward(p, u)
psi = integrate_dual(p, u, transversality_costate(p.L, x.final))

# staged sweep: bang+ until K hits zero, then singular to the end
u1, x1, rec = krotov_iteration(p, u, x, psi)
print("staged:", [(round(s.t_start, 4), s.kind) for s in rec.segments], rec.flags)

# bang-only sweep: windows of rapid sign flips collapse onto the singular arc
r = bang_only_sweep(p, u, psi)
print("chattering windows (node ranges):", r.windows)
print("bang-only:", [(round(s.t_start, 4), s.kind) for s in r.segments])
print(f"max |u_staged - u_bang_only| = {np.max(np.abs(r.values - u1.values)):.1e}")
