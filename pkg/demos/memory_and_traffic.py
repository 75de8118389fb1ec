"""Closed-form memory and parameter-traffic models.

Peak memory counts parameters resident at the worst instant of a step;
traffic counts parameter loads per step.  Block-coordinate updates keep
the peak identical to the plain two-point method while cutting traffic
from 5d toward 2d as the number of blocks grows.

Run:  python demos/memory_and_traffic.py
"""

from subzero import LayerShape, peak_memory_params, traffic_per_step

layers = [LayerShape(512, 64)] + [LayerShape(64, 256), LayerShape(256, 64)] * 3 + [LayerShape(64, 512)]
assignment = {i: i for i in range(len(layers))}

print("peak memory (parameter counts) for an 8-layer toy stack:")
print(f"  {'method':12s} {'weights':>8} {'auxiliary':>10} {'peak':>8}")
for method, kw in (
    ("mezo", {}),
    ("sparse-mezo", {}),
    ("lozo", {"rank": 4}),
    ("mezo-bcd", {"block_assignment": assignment}),
):
    rep = peak_memory_params(method, layers, **kw)
    print(f"  {rep.method:12s} {rep.total_weights:8d} {rep.auxiliary:10d} {rep.peak:8d}")

print("\nparameter loads per step at d = 10,000:")
print(f"  full-space two-point: {traffic_per_step('mezo', 10_000):,.0f}")
for n in (1, 4, 16, 64, 256):
    print(f"  block-coordinate, N={n:<4d}: {traffic_per_step('mezo-bcd', 10_000, n):,.1f}")
print("\nThe block method approaches 2d: two forwards plus block-local touches.")
