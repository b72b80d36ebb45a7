"""Ground state, eigenvalue curve b_c(p) and the localized profile.

Run: python demos/ground_state_and_profile.py
"""

import numpy as np

from gkdv_blowup.grid import Grid
from gkdv_blowup.groundstate import EIGEN_SLOPE_P5, GroundState, l1_l2_ratio
from gkdv_blowup.profile import EigenvalueCurve, find_bc, localized_profile

gs = GroundState(5.0)
y = np.linspace(-20, 20, 2001)
print(f"Q_5(0) = {gs(np.array([0.0]))[0]:.6f}, max ODE residual "
      f"{np.abs(gs.ode_residual(y)).max():.1e}")
print(f"||Q||_2^2 / ||Q||_1^2 = {l1_l2_ratio(5.0, Grid(-40.0, 40.0, 8001)):.8f} "
      f"(4 pi^2 / Gamma(1/4)^4 = {EIGEN_SLOPE_P5:.8f})")

# b_c(p) for p slightly above 5: the secant search shares its history
curve = EigenvalueCurve()
for p in (5.02, 5.05, 5.1):
    bc, sol, curve = find_bc(p, curve=curve)
    print(f"p = {p}: b_c = {bc:.10f}, gamma = {sol.gamma:.10f}, Newton its {sol.iterations}")
slope, intercept = curve.linear_fit()
print(f"b_c ~ {slope:.5f} (p - 5) + {intercept:.1e}")

lp = localized_profile(5.1)
print(f"localized profile at p = 5.1: support |y| <= {2 / lp.b_c:.1f}, "
      f"E(Q_bc) / b_c^3 = {lp.energy() / lp.b_c**3:.4f}")
