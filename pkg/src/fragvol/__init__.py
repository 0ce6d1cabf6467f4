"""Finite-volume solver for mixed discrete/continuous fragmentation models."""
from .config import RunConfig
from .diagnostics import (
    Trajectory,
    TrajectoryRecorder,
    convergence_ladder,
    observed_order,
    reference_oracle,
    relative_L1_error,
    restrict_field,
    total_mass,
)
from .errors import FragvolError
from .kernels import (
    AveragedCoefficients,
    KernelModel,
    PowerLawModel,
    average_coupling,
    average_daughter,
    average_rate,
    build_coefficients,
    check_continuous_mass_condition,
    check_discrete_mass_condition,
    essential_suprema,
    expression_model,
)
from .mesh import Mesh, TimeGrid, build_graded_mesh, build_time_grid, build_uniform_mesh
from .solver import (
    RunOptions,
    RunReport,
    State,
    StabilityReport,
    compute_fluxes,
    compute_sinks,
    project_initial,
    run,
    stability_governor,
    step,
    step_one,
)

__version__ = "0.1.0"

__all__ = [
    "AveragedCoefficients", "FragvolError", "KernelModel", "Mesh", "PowerLawModel", "RunConfig",
    "RunOptions", "RunReport", "StabilityReport", "State", "TimeGrid", "Trajectory", "TrajectoryRecorder",
    "average_coupling", "average_daughter", "average_rate", "build_coefficients", "build_graded_mesh",
    "build_time_grid", "build_uniform_mesh", "check_continuous_mass_condition",
    "check_discrete_mass_condition", "compute_fluxes", "compute_sinks", "convergence_ladder",
    "essential_suprema", "expression_model", "observed_order", "project_initial", "reference_oracle",
    "relative_L1_error", "restrict_field", "run", "stability_governor", "step", "step_one", "total_mass",
]
