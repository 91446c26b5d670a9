"""Compare the five score estimators along the path of a bimodal target.

The posterior particles are exact here, so every error comes from the estimator itself.
"""

import numpy as np

from dpsmc.metrics import score_mse_experiment
from dpsmc.path import DiffusionPath
from dpsmc.targets import make_bimodal

target = make_bimodal()
path = DiffusionPath.for_target(target, 1024)
names = ("dsi", "tsi", "msi", "scv", "mcv")
rows = score_mse_experiment(target, path, names, n_x=500, n_y=16, rng=np.random.default_rng(0))

table = {}
for t, name, mse in rows:
    table.setdefault(t, {})[name] = mse

print("   t  " + "".join(f"{n:>10s}" for n in names))
for t in sorted(table)[::2]:
    print(f"{t:5.3f} " + "".join(f"{table[t][n]:10.3g}" for n in names))

# the denoising identity is good early, the target identity late; the control
# variates follow the better of the two along the whole path
worst = max(table[t]["mcv"] / min(table[t]["dsi"], table[t]["tsi"]) for t in table)
print("worst MCV / min(DSI, TSI):", round(worst, 3))
