"""Block-coordinate zeroth-order training on a stochastic objective.

Trains a logistic separator on two Gaussian clusters using only loss
evaluations: each step perturbs one parameter block with a seeded
Gaussian direction, probes the minibatch loss at +mu and -mu, and
updates that block alone.  The direction is regenerated from its seed
for the update, so nothing bigger than one block is ever held.

Run:  python demos/block_coordinate_logistic.py   (~10 s)
"""

import numpy as np

from subzero import (
    BlockPartition,
    OptimConfig,
    ParamVector,
    StochasticObjective,
    make_logistic_data,
    mezo_bcd_run,
)

x, y = make_logistic_data(n=2000, d=200, seed=7)
obj = StochasticObjective(x, y, batch_size=64)
theta0 = ParamVector(np.zeros(200), BlockPartition.equal(200, 8))
print("logistic task: n=2000, d=200, 8 parameter blocks, batch 64")

for steps in (1000, 4000, 12000):
    cfg = OptimConfig(mu=1e-3, lr=1e-2, steps=steps, master_seed=0)
    log = mezo_bcd_run(obj, theta0, cfg)
    acc = obj.accuracy(log.final_parameters)
    print(f"  after {steps:5d} steps: minibatch loss {log.losses()[-1]:.4f}, "
          f"train accuracy {acc:.3f}")

print("\nTwo loss probes per step, one block touched; ~95% separable data is fit.")
