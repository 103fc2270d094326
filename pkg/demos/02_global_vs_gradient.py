"""
Global improvement versus projected gradient
============================================

Ten iterations of each method on the short-horizon example, started from
u = 0.3. The global method builds bang and singular pieces from the first
step; the gradient method moves node values freely inside [-nu, nu] and ends
up slightly lower on this grid.
"""

from bilincontrol import data
from bilincontrol.improve import SolverConfig, solve

p, grid, u0 = data.example(1)

reports = {}
for method in ("global", "global-regularized", "gradient"):
    cfg = SolverConfig(method=method, max_iters=10, grid=grid)
    reports[method] = solve(p, u0, cfg)

print("iter   global    regularized  gradient")
rows = max(len(r.history) for r in reports.values())
for i in range(rows):
    cells = []
    for r in reports.values():
        cells.append(f"{r.history[i].objective.total:10.5f}" if i < len(r.history) else " " * 10)
    print(f"{i:4d} " + "  ".join(cells))

# the switching structure of the final global control
for seg in reports["global"].history[-1].segments:
    print(f"  [{seg.t_start:.4f}, {seg.t_end:.4f}]  {seg.kind}")
