"""Counter-based random numbers make runs independent of how work is split."""

import numpy as np

from dpsmc.rng import ALD_NOISE, CounterRNG
from dpsmc.samplers import RunConfig, run_dpsmc
from dpsmc.targets import make_gaussian

rng = CounterRNG(seed=7)

# the noise for sample 5 at step 3 is the same whether drawn alone or in a batch
alone = rng.normal(ALD_NOISE, 3, np.array([5]), dim=2)
batch = rng.normal(ALD_NOISE, 3, np.arange(10), dim=2)
print("same draw:", np.array_equal(alone[0], batch[5]))

# so a run split over worker threads reproduces the serial run exactly
target = make_gaussian(np.zeros(3), 1.0)
cfg = RunConfig(target="gaussian", n_samples=96, n_particles=8, steps=32, seed=3)
serial = run_dpsmc(cfg, target)
threaded = run_dpsmc(cfg.replace(workers=3, block_size=32), target)
print("bitwise identical:", np.array_equal(serial.samples, threaded.samples))
