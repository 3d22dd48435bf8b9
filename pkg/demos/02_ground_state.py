"""
Ground state of the scalar problem and its structure.

The solver minimizes S_L over fields with sum a_k^2 k^2 = 2x.  The problem
is convex in a^2, and a pricing test certifies that no omitted mode could
lower the energy, so the result is the global minimizer of the discrete
problem.  This script solves L = 1 and L = 2 and prints the structural
diagnostics and the active spectrum near x = 1.

Run:  python3 demos/02_ground_state.py
"""

import numpy as np

from wrinklelab.solver import SolveOptions, multiplier_identity, solve, structural_checks

for L in (1.0, 2.0):
    r = solve(L, 128, SolveOptions(restarts=1))
    print(f"\nL = {L:g}: sigma_hat = {r.sigma_estimate:.10f}, converged = {r.converged}, "
          f"pricing margin = {r.pricing_margin:.2e}")
    print(f"  EL residual {r.el_residual.relative:.2e}, multiplier identity {multiplier_identity(r):+.2e}")
    print(structural_checks(r).to_text())
    f = r.field
    act = f.active_modes()
    top = [m for m in act[np.argsort(f.a[act, -1])[::-1][:5]] if f.a[m, -1] > 1e-12]
    print("  modes carrying x = 1: " + ", ".join(f"k={f.k[m]:.3f} a={f.a[m, -1]:.3g}" for m in top))
