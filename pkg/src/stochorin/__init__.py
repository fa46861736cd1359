"""Chorin-type projection solvers for the 2-D periodic stochastic Stokes
equations, with coupled fine/coarse Monte Carlo convergence studies."""

__version__ = "0.1.0"

from .fem import (
    FemOperators,
    PeriodicMesh,
    SolveConfig,
    assemble_operators,
    build_periodic_mesh,
    h1_seminorm,
    interpolate_nodal,
    l2_norm,
    prolongation_matrix,
    zero_mean,
)
from .noise import (
    BrownianPath,
    IncrementTable,
    QWienerSpec,
    SqrtPlusOne,
    ZeroNoise,
    build_qwiener_spec,
    coarsen_increments,
    helmholtz_decompose,
    sample_brownian_path,
)
from .presets import PRESETS, Preset, get_preset
from .schemes import (
    ChorinState,
    SchemeConfig,
    TrajectoryRecord,
    initial_state,
    modified_chorin_step,
    run_trajectory,
    standard_chorin_step,
)
from .study import (
    RateFit,
    StudyFailure,
    StudyReport,
    StudySpec,
    SweepRow,
    fit_rate,
    pressure_error_norm,
    report_from_dict,
    report_to_dict,
    run_convergence_study,
    spec_from_dict,
    spec_to_dict,
    velocity_error_norms,
    write_csv,
    write_gnuplot,
    write_json,
)
from .validate import CheckResult, run_validation, validation_passed

__all__ = [
    "__version__",
    "FemOperators",
    "PeriodicMesh",
    "SolveConfig",
    "assemble_operators",
    "build_periodic_mesh",
    "h1_seminorm",
    "interpolate_nodal",
    "l2_norm",
    "prolongation_matrix",
    "zero_mean",
    "BrownianPath",
    "IncrementTable",
    "QWienerSpec",
    "SqrtPlusOne",
    "ZeroNoise",
    "build_qwiener_spec",
    "coarsen_increments",
    "helmholtz_decompose",
    "sample_brownian_path",
    "PRESETS",
    "Preset",
    "get_preset",
    "ChorinState",
    "SchemeConfig",
    "TrajectoryRecord",
    "initial_state",
    "modified_chorin_step",
    "run_trajectory",
    "standard_chorin_step",
    "RateFit",
    "StudyFailure",
    "StudyReport",
    "StudySpec",
    "SweepRow",
    "fit_rate",
    "pressure_error_norm",
    "report_from_dict",
    "report_to_dict",
    "run_convergence_study",
    "spec_from_dict",
    "spec_to_dict",
    "velocity_error_norms",
    "write_csv",
    "write_gnuplot",
    "write_json",
    "CheckResult",
    "run_validation",
    "validation_passed",
]
