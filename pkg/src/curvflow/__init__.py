"""Simulation and verification of the prescribed Gaussian curvature flow on S^2."""

from .conformal_geometry import (
    ConformalFactor,
    MobiusParameter,
    center_of_mass,
    gaussian_curvature,
    liouville_energy,
    mobius_factor,
    mobius_pullback,
    onofri_gap,
    recenter,
    volume,
)
from .diagnostics import AuditRecord, audit_step, audit_trajectory, calabi_energy, flow_energy
from .errors import (
    BlowUp,
    CurvatureOverflow,
    CurvFlowError,
    InvalidArgument,
    InvalidData,
    NoConvergence,
    PositivityViolation,
)
from .flow_engine import (
    ConcentrationReport,
    FlowConfig,
    FlowState,
    InitialData,
    compute_alpha,
    detect_concentration,
    renormalize_volume,
    run,
    step,
)
from .prescribed_curvature import (
    CurvatureSpec,
    evaluate_f,
    find_critical_points,
    initial_positivity,
    preset,
    verify_hypotheses,
)
from .sphere_core import GridField, SpectralField, SphereGrid, analyze, make_grid, synthesize

__version__ = "0.1.0"

__all__ = [
    "ConformalFactor",
    "MobiusParameter",
    "center_of_mass",
    "gaussian_curvature",
    "liouville_energy",
    "mobius_factor",
    "mobius_pullback",
    "onofri_gap",
    "recenter",
    "volume",
    "AuditRecord",
    "audit_step",
    "audit_trajectory",
    "calabi_energy",
    "flow_energy",
    "BlowUp",
    "CurvatureOverflow",
    "CurvFlowError",
    "InvalidArgument",
    "InvalidData",
    "NoConvergence",
    "PositivityViolation",
    "ConcentrationReport",
    "FlowConfig",
    "FlowState",
    "InitialData",
    "compute_alpha",
    "detect_concentration",
    "renormalize_volume",
    "run",
    "step",
    "CurvatureSpec",
    "evaluate_f",
    "find_critical_points",
    "initial_positivity",
    "preset",
    "verify_hypotheses",
    "GridField",
    "SpectralField",
    "SphereGrid",
    "analyze",
    "make_grid",
    "synthesize",
]
