"""Simulate the optimal closed loop and cost it against the value function.

A common Brownian path moves every particle at once, so each path gives one
random flow of clouds.  Averaging the Girsanov-weighted cost over paths
should land on V(0, mu); nudging the feedback in any direction costs more.
"""
import numpy as np

from mvlq.bsde import stream_lq_costs
from mvlq.lq import FeedbackPolicy, QuadraticValue, random_perturbation, value_function
from mvlq.measures import EmpiricalMeasure
from mvlq.mkvsde import generate_common_path
from mvlq.model import LQModel
from mvlq.riccati import solve_riccati

model = LQModel.scalar(a=0.2, b=1.0, q=1.0, r=1.0, g=1.0, abar=0.3, c=0.2, cbar=0.1, d=0.3,
                       qbar=0.5, gbar=0.5, beta=0.3, T=1.0)
qv = QuadraticValue(solve_riccati(model, 2000))
x0 = 0.5 + np.random.default_rng(1).standard_normal((2000, 1))
path = generate_common_path(0.0, model.T, 200, seed=2, n_paths=400)

costs = stream_lq_costs(model, FeedbackPolicy(qv), x0, path, halve=False).costs
se = costs.std(ddof=1) / np.sqrt(costs.size)
print(f"closed-loop cost {costs.mean():.4f} +- {se:.4f}")
print(f"value function   {value_function(qv, 0.0, EmpiricalMeasure(x0)):.4f}")

K = random_perturbation(np.random.default_rng(3), 1, 1, scale=1.0)
print("\n  eps     cost increment (same paths)")
for eps in (-0.2, -0.1, 0.1, 0.2):
    d = stream_lq_costs(model, FeedbackPolicy(qv, K.scaled(eps)), x0, path, halve=False).costs - costs
    print(f"{eps:+.2f}   {d.mean():+.5f} +- {d.std(ddof=1) / np.sqrt(d.size):.5f}")
