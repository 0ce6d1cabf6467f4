"""
A kernel written as expressions
===============================

Uniform binary breakage, b(x|y) = 2/y, with the fragments that fall
below the cutoff sent to monomers.  The mass checks tell us whether the
kernel is admissible before anything is integrated in time.
"""
import numpy as np

from fragvol import build_uniform_mesh, check_continuous_mass_condition, check_discrete_mass_condition
from fragvol import expression_model, run, step_one

N = 5
model = expression_model(
    N, 15,
    a="x",
    b="2/y",
    b_i="(i^2 - (i-1)^2) / (i*y)",  # same cutoff share as the nu = 0 power law
    a_disc=[0.0, 1.0, 1.0, 1.0, 1.0],
    b_disc="2/(j-1)",
)

ys = np.linspace(5.5, 14.5, 7)
print("continuous residuals:", [f"{check_continuous_mass_condition(model, y):.1e}" for y in ys])
print("discrete residuals:  ", [check_discrete_mass_condition(model, i) for i in range(2, N + 1)])

# dropping the cutoff terms leaves a deficit of 25/y at every y
leaky = expression_model(N, 15, "x", "2/y", "0", [0.0, 1, 1, 1, 1], "2/(j-1)")
print("without coupling:", [f"{check_continuous_mass_condition(leaky, y):.3f}" for y in ys])

state, report = run(model, build_uniform_mesh(5, 15, 80), step_one(), np.zeros(N), T=1.0)
print(f"after t=1: continuous {report.continuous_mass_series[-1]:.4f}, "
      f"discrete {report.discrete_mass_series[-1]:.4f}, total {report.final_mass:.4f}")
