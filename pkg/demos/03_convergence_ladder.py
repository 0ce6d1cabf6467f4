"""
First-order convergence
=======================

Halve h (and dt with it) three times and measure the space-time L1 error
against a run eight times finer than the finest level.
"""
import numpy as np

from fragvol import PowerLawModel, build_uniform_mesh, convergence_ladder, step_one

model = PowerLawModel(alpha=-0.5, nu=-0.5)
ladder = convergence_ladder(model, step_one(), np.ones(5), T=25.0,
                            base_mesh=build_uniform_mesh(5, 15, 10), levels=4, refine_factor=8)

print(f"{'h':>8} {'dt':>10} {'error':>12} {'slope':>8}")
for e in ladder.entries:
    slope = "" if e.pair_slope is None else f"{e.pair_slope:.3f}"
    print(f"{e.h:8.4f} {e.dt:10.5f} {e.error:12.4e} {slope:>8}")

# slopes a little above one: the reference itself is only 8x finer
print(f"finest-pair order {ladder.finest_slope:.3f}")
