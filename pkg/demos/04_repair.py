"""
Repair: from an approximately feasible field to an admissible one.

The repair mollifies the mode densities at scale eta, pins the field to
zero at x = 0 and covers the remaining arclength deficit with a cascade
near 0 and one mode of moderate wavenumber elsewhere.  The measured
overhead delta_hat = S(g) - S(v) - penalty(v) is printed for the
0.9-scaled cascade and for a ground state.

Run:  python3 demos/04_repair.py
"""

from wrinklelab.cascade import build_cascade
from wrinklelab.repair import default_eta, repair
from wrinklelab.solver import SolveOptions, default_grids, solve

print("0.9-scaled cascade")
print("    L       eta     penalty     S(v)      S(g)   delta_hat  margin")
for L in (4.0, 16.0, 64.0):
    xg, fr = default_grids(L, 128)
    c = build_cascade(L, 1.0, xg, fr)
    res = repair(c.replace(0.9 * c.a), default_eta(L))
    b = res.budget
    print(f"{L:5g}  {b.eta:.2e}  {b.penalty:9.3f}  {b.energy_v:8.4f}  {b.energy_g:8.4f}  "
          f"{b.delta_hat:9.4f}  {res.feasibility_margin:.1e}")

r = solve(1.0, 128, SolveOptions(restarts=1))
res = repair(r.field)
print(f"\nground state at L = 1: penalty {res.budget.penalty:.1e}, delta_hat {res.budget.delta_hat:.4f}")
for name, value in res.budget.components.items():
    print(f"  {name}: {value:.4f}")
