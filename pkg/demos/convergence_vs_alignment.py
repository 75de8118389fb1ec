"""Convergence speed of subspace ZO-SGD as a function of alignment.

A low-rank projection whose columns include a dialed fraction gamma of
exact Hessian eigenvectors has mean alignment increasing in gamma.
Running the two-point estimator with fresh projections each step shows
the loss after a fixed budget dropping monotonically as gamma grows.

Run:  python demos/convergence_vs_alignment.py   (~15 s)
"""

import numpy as np

from subzero import (
    HessianSpec,
    OptimConfig,
    QuadraticObjective,
    generate_hessian,
    make_sampler,
    mean_rho,
    zo_sgd_run,
)

h = generate_hessian(HessianSpec(dim=128, rank=32, num_blocks=1, max_eigenvals=[10.0], seed=3))
obj = QuadraticObjective(h)
theta0 = np.random.default_rng(0).standard_normal(128)
print(f"quadratic testbed: d=128, rank 32, initial loss {obj.loss(theta0):.2f}")
print(f"{'gamma':>6} {'mean rho':>9} {'final loss':>11}")

for gamma in (0.0, 0.25, 0.5, 0.75, 1.0):
    cfg = OptimConfig(mu=1e-4, lr=1e-3, steps=800, master_seed=7, rho_every=10)
    sampler = make_sampler("controlled", h=h, s=32, gamma=gamma)
    log = zo_sgd_run(obj, theta0, cfg, sampler)
    print(f"{gamma:6.2f} {mean_rho(log):9.2f} {log.losses()[-1]:11.4f}")

print("\nHigher alignment, faster convergence; iterations-to-target scale like 1/rho.")
