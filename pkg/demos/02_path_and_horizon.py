"""The diffusion path: base variance, time horizon and the action bound of a schedule."""

import numpy as np

from dpsmc.path import DiffusionPath, action_bound, linear_lambda, select_T, sigma_from_target
from dpsmc.targets import make_funnel, make_gmm40, make_rings

# the base N(0, sigma^2 I) matches the target's second moment per coordinate
for target in (make_gmm40(2), make_rings(), make_funnel()):
    m2, d = target.second_moment, target.dim
    print(f"{target.name:8s} d={d:2d}  M2={m2:8.2f}  sigma={np.sqrt(sigma_from_target(m2, d)):.2f}")

# the horizon grows like the cube root of K * M2 / d; xi scales it
for xi in (2**-2.5, 1.0, 2**3.5):
    print(f"xi={xi:7.3f}  T(K=1024, GMM40) = {select_T(xi, 1024, 268.98, 2):8.2f}")

# the cosine schedule attains the action bound M2 pi^2 / 4, a linear ramp pays more
target = make_gmm40(2)
cosine = DiffusionPath.for_target(target, 1024)
linear = DiffusionPath(target, cosine.sigma_sq, cosine.horizon, cosine.n_steps, linear_lambda)
print("cosine action   ", round(action_bound(cosine), 2))
print("M2 pi^2 / 4     ", round(target.second_moment * np.pi**2 / 4, 2))
print("linear action   ", round(action_bound(linear), 2), "(diverges logarithmically as the grid is refined)")
