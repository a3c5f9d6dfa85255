"""Two ways to compute a g-expectation, and the comparison principle.

For the linear driver g(z) = beta z the backward equation has an explicit
answer by a change of measure, which the regression solver must reproduce
on the same paths.  Raising the terminal value or the driver never lowers
the solution.
"""
import numpy as np

from mvlq.bsde import Driver, g_expectation_girsanov, solve_bsde_lsmc
from mvlq.mkvsde import generate_common_path

beta, T = 0.3, 1.0
path = generate_common_path(0.0, T, 20, seed=4, n_paths=20_000)
W = path.brownian()
chi = W[:, -1]

gir, gir_se = g_expectation_girsanov(beta, chi, W[:, -1], T)
sol = solve_bsde_lsmc(Driver.linear(beta), chi, W, path.grid, path.increments)
print(f"E_g[W_T]: change of measure {gir:.4f} +- {gir_se:.4f}, "
      f"regression {sol.y0:.4f} +- {sol.y0_stderr:.4f}, exact {beta * T:.4f}")

low = Driver.from_g(lambda z: beta * z, beta)
high = Driver.from_g(lambda z: beta * z + 0.5 * np.abs(z), beta + 0.5)
zeta = np.sin(W[:, -1])
y_low = solve_bsde_lsmc(low, zeta, W, path.grid, path.increments).y0
y_high = solve_bsde_lsmc(high, zeta + 0.1, W, path.grid, path.increments).y0
print(f"comparison: Y0 low {y_low:.4f} <= Y0 high {y_high:.4f}")
