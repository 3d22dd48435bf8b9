"""
Upper-bound deformation for the FvK energy.

A ground state u on the period 2 L0 is extended periodically to 2 L = 2 N L0,
cut off near x = 0 at scale delta = 1/L and completed to a deformation
(w1, w2, u3) in which the shear term vanishes.  The normalized excess
L^2 (E_L - E_0) then approaches sigma_{L0} as L grows; the slow part is the
stretch term inside the cutoff layer [delta/2, delta].

Run:  python3 demos/03_upper_bound.py
"""

from wrinklelab.fvk import E0, assemble_upper_bound, evaluate_EL
from wrinklelab.solver import SolveOptions, solve

L0 = 2.0
u = solve(L0, 128, SolveOptions(restarts=1))
print(f"sigma_hat(L0 = {L0:g}) = {u.sigma_estimate:.6f}")
print("\n    L     n_y   L^2(E-E0)   L^2 T1a   L^2 T2    L^2 T3    L^2 T4")
for N in (2, 4, 8, 16, 32, 64):
    d = assemble_upper_bound(u.field, N)
    e = evaluate_EL(d)
    L2 = d.L**2
    print(f"{d.L:5g}  {d.n_y:6d}  {L2 * (e.total - E0):10.4f}  {L2 * e.T1a:8.4f}  "
          f"{L2 * e.T2:8.2e}  {L2 * e.T3:8.1e}  {L2 * e.T4:8.4f}")
