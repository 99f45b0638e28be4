"""Localized stochastic wave maps into compact targets, on an exact lattice.

The package simulates the extrinsic wave-map equation with multiplicative
spatially-homogeneous noise, its controlled zero-noise skeleton, and the
diagnostics behind the small-noise picture: pathwise cone-energy bounds, a
variational rate evaluator, and weak-perturbation / noise-linearity probes.
"""

__version__ = "0.1.0"

from .energy import (
    EnergyReport,
    energy,
    gronwall_envelope,
    mean_energy_report,
    perpendicularity_defect,
    verify_energy_inequality,
)
from .errors import ConfigInvalid, GeowaveError
from .function_spaces import (
    GridFunction,
    LightCone,
    State,
    extend,
    l2_inner,
    light_cone_norm,
    sobolev_norm,
    sobolev_sq,
    state_norm,
)
from .geometry import DiffusionField, ManifoldModel
from .ldp import (
    ConvergenceReport,
    RateOptions,
    RateResult,
    control_norm,
    rate_function,
    statement1_probe,
    statement2_probe,
    tail_estimate,
)
from .noise import (
    NoiseBasis,
    NoiseIncrement,
    SpectralMeasure,
    build_basis,
    covariance_kernel,
    evaluate_field,
    hs_embedding_norm,
    multiplication_hs_norm,
    sample_increment,
)
from .rng import stream
from .solver import (
    Control,
    LocalizationParams,
    Trajectory,
    blowup_times,
    mild_residual,
    solve_batch,
    solve_skeleton,
    solve_stochastic,
    threshold_time,
    window_norm,
)
from .states import (
    GridGeometry,
    bump_state,
    constant_state,
    make_grid,
    random_state,
    rotating_state,
    twin_pair,
)
from .wave_group import GroupStep, apply_group, generator

__all__ = [
    "__version__",
    "EnergyReport",
    "energy",
    "gronwall_envelope",
    "mean_energy_report",
    "perpendicularity_defect",
    "verify_energy_inequality",
    "ConfigInvalid",
    "GeowaveError",
    "GridFunction",
    "LightCone",
    "State",
    "extend",
    "l2_inner",
    "light_cone_norm",
    "sobolev_norm",
    "sobolev_sq",
    "state_norm",
    "DiffusionField",
    "ManifoldModel",
    "ConvergenceReport",
    "RateOptions",
    "RateResult",
    "control_norm",
    "rate_function",
    "statement1_probe",
    "statement2_probe",
    "tail_estimate",
    "NoiseBasis",
    "NoiseIncrement",
    "SpectralMeasure",
    "build_basis",
    "covariance_kernel",
    "evaluate_field",
    "hs_embedding_norm",
    "multiplication_hs_norm",
    "sample_increment",
    "stream",
    "Control",
    "LocalizationParams",
    "Trajectory",
    "blowup_times",
    "mild_residual",
    "solve_batch",
    "solve_skeleton",
    "solve_stochastic",
    "threshold_time",
    "window_norm",
    "GridGeometry",
    "bump_state",
    "constant_state",
    "make_grid",
    "random_state",
    "rotating_state",
    "twin_pair",
    "GroupStep",
    "apply_group",
    "generator",
]
