"""Zigzag diffusion sampling collapsed to single-step noise-space translation.

The package verifies, on analytic Gaussian-mixture score fields, that a
forward/inverse/forward zigzag of an affine diffusion solver collapses to one
translation in noise space, and measures the order of the errors introduced
when the collapsed sampler replaces the anchor delta with a cached surrogate.

Modules:
    schedule    noise schedules for the vp / flow / spherical geometries
    solver      the affine step pair, its inversion, and the duality checks
    scorefield  closed-form mixture predictions, guidance, parameterizations
    samplers    standard / explicit / implicit / collapsed sampling loops
    analysis    tau, E_TSS, LTE measurements, order fits, backward error
    cli         experiment subcommands writing CSV/JSON artifacts
"""

from .schedule import Schedule, ScheduleKind, make_linear_flow, make_linear_vp, vp_to_spherical
from .solver import (
    LatentState,
    SolverCoefficients,
    check_duality,
    coefficients,
    forward_step,
    inverse_step,
)
from .scorefield import FieldPair, GaussianMixture, GuidedPrediction
from .samplers import SamplerConfig, SamplerVariant, TrajectoryRecord, run_trajectory

__all__ = [
    "Schedule",
    "ScheduleKind",
    "make_linear_vp",
    "make_linear_flow",
    "vp_to_spherical",
    "SolverCoefficients",
    "LatentState",
    "coefficients",
    "forward_step",
    "inverse_step",
    "check_duality",
    "GaussianMixture",
    "FieldPair",
    "GuidedPrediction",
    "SamplerConfig",
    "SamplerVariant",
    "TrajectoryRecord",
    "run_trajectory",
]
