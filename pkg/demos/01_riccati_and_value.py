"""Solve the Riccati system for a scalar mean-field model and read off the value.

The value of a cloud splits into a variance part priced by P1 and a mean
part priced by P2.  Two clouds with the same mean and spread get the same
value, whatever their particle order.
"""
import numpy as np

from mvlq.lq import QuadraticValue, optimal_feedback, value_function
from mvlq.measures import EmpiricalMeasure
from mvlq.model import LQModel
from mvlq.riccati import solve_riccati

model = LQModel.scalar(a=0.2, b=1.0, q=1.0, r=1.0, g=1.0, abar=0.3, c=0.2, cbar=0.1, d=0.3,
                       qbar=0.5, gbar=0.5, beta=0.3, T=1.0)
ric = solve_riccati(model, 2000)
qv = QuadraticValue(ric)

P1, P2, _, _ = ric.state(0.0)
print(f"P1(0) = {P1[0, 0]:.6f}   P2(0) = {P2[0, 0]:.6f}")

rng = np.random.default_rng(0)
x = 0.5 + rng.standard_normal((2000, 1))
mu = EmpiricalMeasure(x)
print(f"V(0, mu)           = {value_function(qv, 0.0, mu):.6f}")
print(f"V(0, shuffled mu)  = {value_function(qv, 0.0, EmpiricalMeasure(x[::-1])):.6f}")
print(f"V(0, point mass)   = {value_function(qv, 0.0, EmpiricalMeasure(np.full((1, 1), 0.5))):.6f}")

# the optimal control is affine: one gain on the deviation, one on the mean
K = optimal_feedback(qv, 0.0)
print(f"u*(x) = {K.K_dev[0, 0]:.4f} (x - mean) + {K.K_mean[0, 0]:.4f} mean")

for t in np.linspace(0, 1, 5):
    print(f"t = {t:.2f}   V(t, mu) = {value_function(qv, t, mu):.5f}")
