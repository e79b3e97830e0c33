"""
Jumps that leave the domain
===========================

On D = (0, 1) the process is killed at rate 1 and restarted at y = 2, well
outside D, where phi = 1. Exits across 0 and 1 score 0. The value solves
u''/2 + (1 - u) = 0 with zero boundary values, which has a closed form.
Monte Carlo, finite differences and the closed form are put side by side.
"""

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from nldp import estimators as E
from nldp import oracle_fd as O
from nldp import scenarios as S
from nldp.pathsim import SimConfig

spec = S.sinh_jump()
xs = np.array([0.1, 0.25, 0.5, 0.75, 0.9])
mc = E.solve_dirichlet(spec, xs[:, None], 10_000, SimConfig(dt_base=1e-4), 3)

fine = O.solve_dirichlet_fd(spec, 1 / 200)
coarse = O.solve_dirichlet_fd(spec, 1 / 100)
report = O.compare(mc, fine, coarse)
for row in report.rows:
    exact = float(S.closed_form_sinh(row.point[0]))
    print(f"x = {row.point[0]:.2f}  mc = {row.mc_mean:.4f}  fd = {row.oracle:.5f}  exact = {exact:.5f}  "
          f"gap/tol = {row.ratio:.2f}")

###############################################################################
# How the paths ended: a jump to y = 2 or diffusion across the boundary.

for x, est in mc:
    print(f"x = {x[0]:.2f}: {100 * est.aux['jumped_outside_fraction']:.1f}% jumped out, "
          f"mean exit time {est.aux['mean_exit_time']:.3f}")

grid = np.linspace(0, 1, 201)
plt.plot(grid, S.closed_form_sinh(grid), "k-", label="closed form")
plt.errorbar(xs, [e.mean for _, e in mc], yerr=[1.96 * e.stderr for _, e in mc], fmt="o", label="Monte Carlo")
plt.xlabel("x")
plt.ylabel("u")
plt.legend()
plt.savefig("jump_atom.png", dpi=120)
