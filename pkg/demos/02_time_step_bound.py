"""
Why the time step is capped
===========================

The governor picks dt from three bounds.  Ignoring the nonnegativity bound
drives cell values below zero within a few steps.
"""
import numpy as np

from fragvol import PowerLawModel, RunOptions, build_coefficients, build_uniform_mesh, run, stability_governor
from fragvol import step_one

model = PowerLawModel(alpha=0.5, nu=-1.0)
mesh = build_uniform_mesh(5, 15, 160)
bounds = stability_governor(build_coefficients(model, mesh), mesh)
for name, value in bounds.to_dict().items():
    print(f"{name:>22}: {value}")

for factor in (0.5, 1.0, 10.0):
    _, rep = run(model, mesh, step_one(), np.ones(5), 2.4, RunOptions(unsafe_dt=factor))
    neg = rep.first_negative
    verdict = "stays nonnegative" if neg is None else f"negative at step {neg['step']} ({neg['regime']}{neg['index']})"
    print(f"dt = {factor:>4} x continuous bound: {verdict}")
